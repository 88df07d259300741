#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace chatdiag;
using testsupport::TempDir;

TEST(Synthetic, CheckedInBundleMatchesGenerator) {
    TempDir dir;
    synthetic::write_bundle(dir.path(), {20, 7});
    for (const char* name : {"corpus.jsonl", "rules.jsonl", "heuristics.jsonl", "image_captions.json", "manifest.json"})
        EXPECT_EQ(jsonio::read_file(dir / name), jsonio::read_file(testsupport::synthetic_dir() / name)) << name;
}

TEST(Synthetic, ShapeAndInvariants) {
    auto b = synthetic::generate({20, 7});
    ASSERT_EQ(b.corpus.size(), 40u);
    std::set<std::string> ids;
    for (const auto& u : b.corpus) {
        EXPECT_NO_THROW(validate(u));
        EXPECT_TRUE(ids.insert(u.user_id).second);
        EXPECT_GE(u.posts.size(), 6u);
        EXPECT_LE(u.posts.size(), 10u);
        for (std::size_t i = 0; i < u.posts.size(); ++i) {
            EXPECT_NE(u.posts[i].text.find(synthetic::marker(u.user_id)), std::string::npos);
            if (i > 0) {
                EXPECT_LT(u.posts[i - 1].timestamp, u.posts[i].timestamp);
            }
            for (const auto& img : u.posts[i].images) {
                if (img.uri && !img.caption) {
                    EXPECT_TRUE(b.image_captions.count(*img.uri)) << *img.uri;
                }
            }
        }
        const auto& h = b.heuristics.at(u.user_id);
        EXPECT_NO_THROW(h.validate());
        EXPECT_EQ(h.p_a > 0.5, u.label == Label::Depressed);
    }
    EXPECT_EQ(synthetic::user_id(Label::Depressed, 3, 20), "u-positive-03");
    EXPECT_EQ(synthetic::user_id(Label::NonDepressed, 7, 1000), "u-negative-0007");
}

TEST(Synthetic, RulesAnswerEveryUserCorrectly) {
    auto b = synthetic::generate({20, 7});
    auto backend = testsupport::scripted(b.rules);
    PipelineResources r;
    r.backend = backend;
    for (const auto& u : b.corpus) {
        auto d = diagnose_timeline(u, ExperimentSetting::few_shot(), r).diagnosis;
        EXPECT_EQ(d.label, *u.label) << u.user_id;
        EXPECT_FALSE(d.explanation.empty());
        if (u.label == Label::Depressed) {
            EXPECT_FALSE(d.evidence.empty()) << u.user_id;
        }
    }
}

TEST(Synthetic, SameSeedSameBundleDifferentSeedDiffers) {
    auto a = synthetic::generate({5, 1}), b = synthetic::generate({5, 1}), c = synthetic::generate({5, 2});
    EXPECT_EQ(a.corpus, b.corpus);
    EXPECT_EQ(a.heuristics, b.heuristics);
    EXPECT_NE(a.corpus, c.corpus);
    EXPECT_THROW(synthetic::generate({0, 1}), ConfigError);
}
