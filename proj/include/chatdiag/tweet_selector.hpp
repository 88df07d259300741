#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "chatdiag/core_model.hpp"
#include "chatdiag/image_descriptor.hpp"
#include "chatdiag/llm_gateway.hpp"
#include "chatdiag/random.hpp"
#include "chatdiag/text.hpp"

namespace chatdiag {

// Rates how negative a piece of text is: 0 = not at all, 1 = most negative.
// Throws ScorerError when it cannot produce a score.
class NegativityScorer {
public:
    virtual ~NegativityScorer() = default;
    virtual double score(const std::string& text) const = 0;
    virtual std::string identity() const = 0;
};

// Sum of per-word weights squashed through a logistic, so text with no
// lexicon hits lands exactly on the neutral 0.5.
class LexiconScorer : public NegativityScorer {
public:
    explicit LexiconScorer(std::map<std::string, double> weights) : weights_(std::move(weights)) {}

    static LexiconScorer default_lexicon() {
        std::map<std::string, double> w;
        for (const char* word :
             {"hopeless", "exhausted", "tired", "sad", "lonely", "alone", "worthless", "empty", "depressed",
              "depression", "cry", "crying", "cried", "hate", "pain", "numb", "anxious", "anxiety", "guilt",
              "guilty", "suicidal", "die", "dying", "miserable", "insomnia", "failure", "hurt", "broken",
              "angry", "useless", "sleepless", "drained", "awful", "terrible", "pointless", "nothing"})
            w[word] = 1.0;
        for (const char* word : {"happy", "great", "love", "fun", "excited", "awesome", "wonderful", "amazing",
                                 "glad", "enjoy", "enjoyed", "beautiful", "proud", "grateful", "lovely", "best",
                                 "delicious", "celebrate", "laugh"})
            w[word] = -1.0;
        return LexiconScorer(std::move(w));
    }

    double score(const std::string& text) const override {
        double total = 0.0;
        for (const auto& token : tokens(text))
            if (auto it = weights_.find(token); it != weights_.end()) total += it->second;
        return 1.0 / (1.0 + std::exp(-total));
    }

    std::string identity() const override {
        std::string all;
        for (const auto& [k, v] : weights_) all += k + "=" + text::fixed(v, 6) + ";";
        return "lexicon#" + text::sha256_hex(all);
    }

    // Lowercased runs of ASCII letters, digits and apostrophes.
    static std::vector<std::string> tokens(std::string_view s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            auto u = static_cast<unsigned char>(c);
            if (std::isalnum(u) || c == '\'') {
                cur.push_back(static_cast<char>(std::tolower(u)));
            } else if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

private:
    std::map<std::string, double> weights_;
};

inline constexpr const char* kNegativityInstruction =
    "Rate the negativity of this post from 0.0 to 1.0. Reply exactly: NEGATIVITY: <number>";

// Reads the first "NEGATIVITY: <number>" in a reply.
inline double parse_negativity_reply(std::string_view reply) {
    auto pos = text::ifind(reply, "negativity:");
    if (pos == std::string_view::npos) throw ScorerError("reply lacks NEGATIVITY: marker");
    std::string rest(text::trim(reply.substr(pos + 11)));
    char* end = nullptr;
    double v = std::strtod(rest.c_str(), &end);
    if (end == rest.c_str() || !std::isfinite(v)) throw ScorerError("reply has no number after NEGATIVITY:");
    if (v < 0.0 || v > 1.0) throw ScorerError("negativity " + rest.substr(0, 16) + " outside [0,1]");
    return v;
}

// Asks the language model for a score; one request per post.
class LlmScorer : public NegativityScorer {
public:
    explicit LlmScorer(std::shared_ptr<LlmBackend> backend) : backend_(std::move(backend)) {}

    static std::string build_prompt(const std::string& text) {
        return std::string(kNegativityInstruction) + "\nPost: " + text::single_line(text);
    }

    double score(const std::string& text) const override {
        CompletionRequest req;
        req.prompt = PromptText::plain(build_prompt(text));
        req.max_output_tokens = 16;
        req.temperature = 0.0;
        std::string reply;
        try {
            reply = backend_->complete(req);
        } catch (const GatewayError& e) {
            throw ScorerError(std::string("scorer backend failed: ") + e.what());
        }
        return parse_negativity_reply(reply);
    }

    std::string identity() const override { return "llm#" + backend_->identity(); }

private:
    std::shared_ptr<LlmBackend> backend_;
};

// Score of the descriptor-expanded post text.
inline double score_negativity(const Post& post, const NegativityScorer& scorer) {
    double s = scorer.score(render_post_text(post));
    if (!(s >= 0.0 && s <= 1.0)) throw ScorerError("scorer returned value outside [0,1]");
    return s;
}

inline constexpr double kFallbackNegativity = 0.5;

// Scores every post, substituting the neutral fallback (with a warning) when
// the scorer fails. Results are indexed by input position.
inline std::vector<double> score_posts(const std::vector<Post>& posts, const NegativityScorer& scorer,
                                       std::vector<std::string>* warnings = nullptr,
                                       std::size_t max_parallel = 1) {
    std::vector<double> scores(posts.size(), kFallbackNegativity);
    std::vector<std::string> errors(posts.size());
    auto one = [&](std::size_t i) {
        try {
            scores[i] = score_negativity(posts[i], scorer);
        } catch (const std::exception& e) {
            scores[i] = kFallbackNegativity;
            errors[i] = e.what();
        }
    };
    const std::size_t width = std::max<std::size_t>(1, max_parallel);
    for (std::size_t start = 0; start < posts.size(); start += width) {
        std::size_t end = std::min(posts.size(), start + width);
        if (width == 1) {
            one(start);
            continue;
        }
        std::vector<std::future<void>> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, one, i));
        for (auto& f : batch) f.get();
    }
    if (warnings)
        for (std::size_t i = 0; i < posts.size(); ++i)
            if (!errors[i].empty())
                warnings->push_back("negativity scoring failed for post " + posts[i].post_id + ": " + errors[i] +
                                    "; using 0.5");
    return scores;
}

struct SelectorConfig {
    SelectorStrategy strategy = SelectorStrategy::Recent;
    int n = 4;
    std::optional<std::uint64_t> seed;  // Random only

    void validate() const {
        if (n < 1) throw ConfigError("selector: n must be >= 1");
        if (strategy == SelectorStrategy::Random && !seed) throw ConfigError("selector: random strategy needs a seed");
        if (strategy != SelectorStrategy::Random && seed)
            throw ConfigError("selector: seed only applies to the random strategy");
    }
};

// Posts in selector priority order (highest first), truncated to n.
//   Random:    first n of the seed-determined permutation
//   Recent:    newest first; equal timestamps keep input order
//   Sentiment: most negative first; equal scores keep input order
inline std::vector<Post> select_ranked(const std::vector<Post>& posts, const SelectorConfig& config,
                                       const NegativityScorer* scorer = nullptr,
                                       std::vector<std::string>* warnings = nullptr, std::size_t max_parallel = 1) {
    config.validate();
    if (posts.empty()) throw ConfigError("selector: no posts to select from");
    if (config.strategy == SelectorStrategy::Sentiment && !scorer)
        throw ConfigError("selector: sentiment strategy needs a negativity scorer");

    const std::size_t m = posts.size();
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.n), m);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);

    switch (config.strategy) {
    case SelectorStrategy::Random: {
        Rng rng(*config.seed);
        order = seeded_permutation(m, rng);
        break;
    }
    case SelectorStrategy::Recent:
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return posts[a].timestamp > posts[b].timestamp; });
        break;
    case SelectorStrategy::Sentiment: {
        auto scores = score_posts(posts, *scorer, warnings, max_parallel);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        break;
    }
    }

    std::vector<Post> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(posts[order[i]]);
    return out;
}

// Oldest first; ties keep their relative order.
inline void sort_chronologically(std::vector<Post>& posts) {
    std::stable_sort(posts.begin(), posts.end(), [](const Post& a, const Post& b) { return a.timestamp < b.timestamp; });
}

// Reduces m posts to min(n, m) and returns them oldest first.
inline std::vector<Post> select(const std::vector<Post>& posts, const SelectorConfig& config,
                                const NegativityScorer* scorer = nullptr, std::vector<std::string>* warnings = nullptr,
                                std::size_t max_parallel = 1) {
    auto chosen = select_ranked(posts, config, scorer, warnings, max_parallel);
    sort_chronologically(chosen);
    return chosen;
}

}  // namespace chatdiag
