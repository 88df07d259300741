#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "support.hpp"

using namespace chatdiag;
using testsupport::post;

namespace {

std::vector<std::string> ids(const std::vector<Post>& posts) { return oracle::ids(posts); }

std::vector<Post> three() {
    return {post("p1", "2023-01-01T00:00:00Z", "one"), post("p2", "2023-01-02T00:00:00Z", "two"),
            post("p3", "2023-01-03T00:00:00Z", "three")};
}

}  // namespace

TEST(Recent, KeepsNewestInChronologicalOrder) {
    auto out = select(three(), {SelectorStrategy::Recent, 2, std::nullopt});
    EXPECT_EQ(ids(out), (std::vector<std::string>{"p2", "p3"}));
}

TEST(Recent, NotLessThanMPassesEverythingThrough) {
    auto posts = three();
    std::swap(posts[0], posts[2]);
    for (int n : {3, 4, 100}) {
        auto out = select(posts, {SelectorStrategy::Recent, n, std::nullopt});
        EXPECT_EQ(ids(out), (std::vector<std::string>{"p1", "p2", "p3"})) << n;
    }
}

TEST(Sentiment, MostNegativeChosenThenChronological) {
    std::vector<Post> posts = {post("p1", "2023-01-01T00:00:00Z", "a"), post("p2", "2023-01-02T00:00:00Z", "b"),
                               post("p3", "2023-01-03T00:00:00Z", "c"), post("p4", "2023-01-04T00:00:00Z", "d")};
    oracle::TableScorer scorer({{"a", 0.9}, {"b", 0.1}, {"c", 0.9}, {"d", 0.5}});
    auto out = select(posts, {SelectorStrategy::Sentiment, 2, std::nullopt}, &scorer);
    EXPECT_EQ(ids(out), (std::vector<std::string>{"p1", "p3"}));
}

TEST(Sentiment, ScoresDescriptorExpandedText) {
    auto p = post("p1", "2023-01-01T00:00:00Z", "look");
    p.images.push_back({std::nullopt, std::string("a sad empty room"), std::nullopt});
    oracle::TableScorer scorer({{"look [image: a sad empty room]", 0.7}});
    EXPECT_DOUBLE_EQ(score_negativity(p, scorer), 0.7);
}

TEST(Lexicon, NeutralAndNegative) {
    auto lex = LexiconScorer::default_lexicon();
    EXPECT_DOUBLE_EQ(lex.score(""), 0.5);
    EXPECT_DOUBLE_EQ(lex.score("The bus leaves at noon."), 0.5);
    EXPECT_GT(lex.score("I feel hopeless and exhausted every day"), 0.5);
    EXPECT_LT(lex.score("What a wonderful, happy day"), 0.5);
    EXPECT_EQ(lex.identity(), LexiconScorer::default_lexicon().identity());
    EXPECT_NE(lex.identity(), LexiconScorer({{"x", 1.0}}).identity());
}

TEST(LlmScorer, ParsesNegativityReply) {
    auto backend = testsupport::scripted({testsupport::contains({"Rate the negativity", "rainy"}, "NEGATIVITY: 0.8")});
    LlmScorer scorer(backend);
    EXPECT_DOUBLE_EQ(scorer.score("A rainy\nday"), 0.8);
    EXPECT_DOUBLE_EQ(parse_negativity_reply("Sure. negativity: 0.25 because"), 0.25);
    EXPECT_THROW(parse_negativity_reply("0.3"), ScorerError);
    EXPECT_THROW(parse_negativity_reply("NEGATIVITY: high"), ScorerError);
    EXPECT_THROW(parse_negativity_reply("NEGATIVITY: 1.5"), ScorerError);
}

TEST(LlmScorer, FailureFallsBackToNeutralWithWarning) {
    LlmScorer scorer(testsupport::scripted({}));
    auto posts = three();
    std::vector<std::string> warnings;
    auto scores = score_posts(posts, scorer, &warnings);
    EXPECT_EQ(scores, (std::vector<double>{0.5, 0.5, 0.5}));
    ASSERT_EQ(warnings.size(), 3u);
    EXPECT_NE(warnings[1].find("p2"), std::string::npos);
}

TEST(SelectorConfig, RejectsInconsistentSettings) {
    auto posts = three();
    EXPECT_THROW(select(posts, {SelectorStrategy::Recent, 0, std::nullopt}), ConfigError);
    EXPECT_THROW(select(posts, {SelectorStrategy::Random, 2, std::nullopt}), ConfigError);
    EXPECT_THROW(select(posts, {SelectorStrategy::Recent, 2, 5u}), ConfigError);
    EXPECT_THROW(select(posts, {SelectorStrategy::Sentiment, 2, std::nullopt}), ConfigError);
    EXPECT_THROW(select({}, {SelectorStrategy::Recent, 2, std::nullopt}), ConfigError);
}

TEST(Random, SeededPrefixOfOnePermutation) {
    std::vector<Post> posts;
    for (int i = 0; i < 30; ++i)
        posts.push_back(post("p" + std::to_string(i), "2023-01-01T00:00:00Z", "t" + std::to_string(i)));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto full = ids(select_ranked(posts, {SelectorStrategy::Random, 30, seed}));
        EXPECT_EQ(std::set<std::string>(full.begin(), full.end()).size(), 30u);
        for (int n : {1, 5, 17}) {
            auto part = ids(select_ranked(posts, {SelectorStrategy::Random, n, seed}));
            EXPECT_EQ(part, std::vector<std::string>(full.begin(), full.begin() + n));
        }
        EXPECT_EQ(full, ids(select_ranked(posts, {SelectorStrategy::Random, 30, seed})));
    }
    EXPECT_NE(ids(select_ranked(posts, {SelectorStrategy::Random, 30, 1u})),
              ids(select_ranked(posts, {SelectorStrategy::Random, 30, 2u})));
}

TEST(OracleEquivalence, RecentOverRandomTimelines) {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        auto t = oracle::random_timeline(gen);
        const int n = 1 + static_cast<int>(gen() % 12);
        auto got = select(t.posts, {SelectorStrategy::Recent, n, std::nullopt});
        ASSERT_EQ(ids(got), oracle::recent(t.posts, n)) << "trial " << trial;
        ASSERT_TRUE(std::is_sorted(got.begin(), got.end(),
                                   [](const Post& a, const Post& b) { return a.timestamp < b.timestamp; }));
    }
}

TEST(OracleEquivalence, SentimentOverRandomTimelines) {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 1000; ++trial) {
        auto t = oracle::random_timeline(gen);
        const int n = 1 + static_cast<int>(gen() % 12);
        oracle::TableScorer scorer(t.scores);
        auto got = select(t.posts, {SelectorStrategy::Sentiment, n, std::nullopt}, &scorer, nullptr, trial % 2 ? 4 : 1);
        ASSERT_EQ(ids(got), oracle::sentiment(t.posts, t.scores, n)) << "trial " << trial;
        ASSERT_EQ(got.size(), std::min<std::size_t>(n, t.posts.size()));
    }
}
