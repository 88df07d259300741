#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chatdiag/core_model.hpp"
#include "chatdiag/random.hpp"
#include "chatdiag/text.hpp"

namespace chatdiag {

enum class PerturbOp { Delete, Substitute };

using HomoglyphMap = std::map<char32_t, std::vector<char32_t>>;

// l<->1, o<->0, a<->@, e<->3, i<->!, s<->$
inline HomoglyphMap default_homoglyphs() {
    HomoglyphMap m;
    for (auto [a, b] : std::initializer_list<std::pair<char32_t, char32_t>>{
             {U'l', U'1'}, {U'o', U'0'}, {U'a', U'@'}, {U'e', U'3'}, {U'i', U'!'}, {U's', U'$'}}) {
        m[a].push_back(b);
        m[b].push_back(a);
    }
    return m;
}

inline HomoglyphMap homoglyphs_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("homoglyph map must be a JSON object");
    HomoglyphMap m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto key = text::decode_utf8(it.key());
        if (key.size() != 1) throw ConfigError("homoglyph key '" + it.key() + "' must be one character");
        if (!it.value().is_array()) throw ConfigError("homoglyph entry for '" + it.key() + "' must be an array");
        for (const auto& v : it.value()) {
            auto cps = text::decode_utf8(v.get<std::string>());
            if (cps.size() != 1) throw ConfigError("homoglyph value for '" + it.key() + "' must be one character");
            m[key[0]].push_back(cps[0]);
        }
    }
    return m;
}

inline HomoglyphMap load_homoglyphs(const std::filesystem::path& path) { return homoglyphs_from_json(jsonio::parse_file(path)); }

struct PerturbConfig {
    std::uint64_t seed = 0;
    double word_rate = 0.15;
    std::vector<PerturbOp> ops = {PerturbOp::Delete, PerturbOp::Substitute};
    HomoglyphMap homoglyphs = default_homoglyphs();
    bool allow_cjk_delete = false;

    void validate() const {
        if (ops.empty()) throw ConfigError("perturb: ops must be non-empty");
        if (!(word_rate >= 0.0 && word_rate <= 1.0)) throw ConfigError("perturb: word_rate must lie in [0,1]");
        for (const auto& [c, alts] : homoglyphs) {
            if (alts.empty()) throw ConfigError("perturb: homoglyph list must be non-empty");
            if (std::find(alts.begin(), alts.end(), c) != alts.end())
                throw ConfigError("perturb: a character cannot be its own homoglyph");
        }
    }
};

inline json to_json(const PerturbConfig& c) {
    json ops = json::array();
    for (auto op : c.ops) ops.push_back(op == PerturbOp::Delete ? "delete" : "substitute");
    json map = json::object();
    for (const auto& [k, alts] : c.homoglyphs) {
        json list = json::array();
        for (char32_t a : alts) list.push_back(text::encode_utf8({a}));
        map[text::encode_utf8({k})] = list;
    }
    return {{"seed", c.seed}, {"word_rate", c.word_rate}, {"ops", ops}, {"homoglyphs", map},
            {"allow_cjk_delete", c.allow_cjk_delete}};
}

namespace perturb_detail {

inline bool has_cjk(const std::vector<char32_t>& cps) {
    return std::any_of(cps.begin(), cps.end(), text::is_cjk);
}

inline std::vector<std::size_t> substitutable(const std::vector<char32_t>& cps, const HomoglyphMap& map) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i + 1 < cps.size(); ++i)
        if (map.count(cps[i])) out.push_back(i);
    return out;
}

inline bool eligible(const std::vector<char32_t>& cps, PerturbOp op, const PerturbConfig& config) {
    if (cps.size() < 3) return false;
    if (op == PerturbOp::Delete) return config.allow_cjk_delete || !has_cjk(cps);
    return !substitutable(cps, config.homoglyphs).empty();
}

}  // namespace perturb_detail

// One character edit that keeps the first and last characters. Returns
// nullopt when the word is ineligible for `op` (fewer than 3 characters, no
// mappable interior character, or CJK text under Delete).
inline std::optional<std::string> perturb_word(std::string_view word, PerturbOp op, Rng& rng,
                                               const PerturbConfig& config = {}) {
    auto cps = text::decode_utf8(word);
    if (!perturb_detail::eligible(cps, op, config)) return std::nullopt;
    if (op == PerturbOp::Delete) {
        auto pos = 1 + static_cast<std::size_t>(rng.below(cps.size() - 2));
        cps.erase(cps.begin() + static_cast<std::ptrdiff_t>(pos));
    } else {
        auto candidates = perturb_detail::substitutable(cps, config.homoglyphs);
        auto pos = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
        const auto& alts = config.homoglyphs.at(cps[pos]);
        cps[pos] = alts[static_cast<std::size_t>(rng.below(alts.size()))];
    }
    return text::encode_utf8(cps);
}

struct PerturbStats {
    std::size_t eligible_words = 0;
    std::size_t perturbed_words = 0;
};

// Whitespace is preserved byte-for-byte; each eligible word is perturbed with
// probability word_rate using an op drawn uniformly from the ops it qualifies for.
inline std::string perturb_text(std::string_view input, const PerturbConfig& config, Rng& rng,
                                PerturbStats* stats = nullptr) {
    std::string out;
    out.reserve(input.size());
    std::size_t i = 0;
    while (i < input.size()) {
        if (text::is_space(input[i])) {
            out.push_back(input[i++]);
            continue;
        }
        std::size_t j = i;
        while (j < input.size() && !text::is_space(input[j])) ++j;
        auto word = input.substr(i, j - i);
        i = j;

        auto cps = text::decode_utf8(word);
        std::vector<PerturbOp> usable;
        for (auto op : config.ops)
            if (perturb_detail::eligible(cps, op, config)) usable.push_back(op);
        if (usable.empty()) {
            out += word;
            continue;
        }
        if (stats) ++stats->eligible_words;
        if (rng.unit() >= config.word_rate) {
            out += word;
            continue;
        }
        auto op = usable[static_cast<std::size_t>(rng.below(usable.size()))];
        out += *perturb_word(word, op, rng, config);
        if (stats) ++stats->perturbed_words;
    }
    return out;
}

// Seed for one post: independent of how posts are scheduled.
inline std::uint64_t post_seed(std::uint64_t seed, const std::string& user_id, const std::string& post_id) {
    return splitmix64(seed ^ text::fnv1a64(user_id + '\x1f' + post_id));
}

// Character-level OOD copy of a timeline. Only post text changes.
inline UserTimeline perturb_timeline(const UserTimeline& timeline, const PerturbConfig& config,
                                     PerturbStats* stats = nullptr) {
    config.validate();
    UserTimeline out = timeline;
    if (config.word_rate == 0.0) return out;
    for (auto& post : out.posts) {
        Rng rng(post_seed(config.seed, timeline.user_id, post.post_id));
        post.text = perturb_text(post.text, config, rng, stats);
    }
    return out;
}

}  // namespace chatdiag
