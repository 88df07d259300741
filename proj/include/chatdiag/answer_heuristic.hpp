#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>

#include "chatdiag/core_model.hpp"
#include "chatdiag/text.hpp"
#include "chatdiag/tweet_selector.hpp"

namespace chatdiag {

inline constexpr double kHeuristicSumTolerance = 1e-3;

// Class probabilities from an external full-data detector.
struct AnswerHeuristic {
    std::string user_id;
    double p_a = 0.5;  // depressed
    double p_b = 0.5;  // non-depressed

    bool operator==(const AnswerHeuristic&) const = default;

    void validate(std::size_t line = 0) const {
        const std::string subject = "heuristic " + user_id;
        if (user_id.empty()) throw ValidationError(subject, "user_id", "must be non-empty", line);
        if (!(p_a >= 0.0 && p_a <= 1.0)) throw ValidationError(subject, "p_depressed", "outside [0,1]", line);
        if (!(p_b >= 0.0 && p_b <= 1.0)) throw ValidationError(subject, "p_non_depressed", "outside [0,1]", line);
        if (std::abs(p_a + p_b - 1.0) > kHeuristicSumTolerance)
            throw ValidationError(subject, "p_depressed+p_non_depressed",
                                  "sum " + text::fixed(p_a + p_b, 4) + " differs from 1 by more than 1e-3", line);
    }
};

using HeuristicTable = std::map<std::string, AnswerHeuristic>;

inline AnswerHeuristic heuristic_from_json(const json& j, std::size_t line = 0) {
    AnswerHeuristic h;
    h.user_id = jsonio::require<std::string>(j, "user_id", "heuristic", line);
    h.p_a = jsonio::require<double>(j, "p_depressed", "heuristic " + h.user_id, line);
    h.p_b = jsonio::require<double>(j, "p_non_depressed", "heuristic " + h.user_id, line);
    h.validate(line);
    return h;
}

inline json to_json(const AnswerHeuristic& h) {
    return {{"user_id", h.user_id}, {"p_depressed", h.p_a}, {"p_non_depressed", h.p_b}};
}

// JSONL, one {"user_id", "p_depressed", "p_non_depressed"} per line.
inline HeuristicTable load_heuristics(const std::filesystem::path& path) {
    HeuristicTable table;
    jsonio::for_each_jsonl(path, [&](const json& j, std::size_t line) {
        auto h = heuristic_from_json(j, line);
        if (table.count(h.user_id))
            throw ValidationError("heuristic " + h.user_id, "user_id", "duplicate entry", line);
        table.emplace(h.user_id, std::move(h));
    });
    return table;
}

// "Answer candidate: [A 0.90]; [B 0.10]", two decimals, half-up.
inline std::string render_candidate_line(const AnswerHeuristic& h) {
    return "Answer candidate: [A " + text::fixed(h.p_a, 2) + "]; [B " + text::fixed(h.p_b, 2) + "]";
}

// Stand-in for an external detector so full-data mode runs without a
// heuristics file: mean post negativity through a logistic (slope 8, midpoint 0.5).
inline AnswerHeuristic baseline_heuristic(const UserTimeline& timeline, const NegativityScorer& scorer) {
    double sum = 0.0;
    for (const auto& p : timeline.posts) {
        try {
            sum += score_negativity(p, scorer);
        } catch (const ScorerError&) {
            sum += kFallbackNegativity;
        }
    }
    double mean = sum / static_cast<double>(timeline.posts.size());
    double p_a = 1.0 / (1.0 + std::exp(-8.0 * (mean - 0.5)));
    return {timeline.user_id, p_a, 1.0 - p_a};
}

}  // namespace chatdiag
