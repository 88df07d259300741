#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chatdiag/answer_heuristic.hpp"
#include "chatdiag/core_model.hpp"
#include "chatdiag/diagnosis_parser.hpp"
#include "chatdiag/image_descriptor.hpp"
#include "chatdiag/llm_gateway.hpp"
#include "chatdiag/prompt_builder.hpp"
#include "chatdiag/tweet_selector.hpp"

namespace chatdiag {

using PromptObserver = std::function<void(const std::string& user_id, const PromptText& prompt)>;

// Everything besides the setting that a diagnosis run depends on.
struct PipelineResources {
    PromptResources prompts = default_prompt_resources();
    std::shared_ptr<LlmBackend> backend;
    std::optional<HeuristicTable> heuristics;
    bool baseline_heuristic = false;  // derive A from the scorer when no table entry exists
    std::shared_ptr<const NegativityScorer> scorer;
    std::optional<DescriptorBackend> descriptor;
    std::uint64_t selector_seed = 0;
    PromptOptions prompt_options;
    int max_output_tokens = 512;
    std::size_t max_parallel = 1;
    PromptObserver observer;
};

struct DiagnoseResult {
    Diagnosis diagnosis;
    std::vector<Post> selected_posts;
    PromptText prompt;
    std::vector<std::string> warnings;
};

inline SelectorConfig selector_config(const ExperimentSetting& setting, const PipelineResources& r) {
    SelectorConfig c{setting.selector, setting.n, std::nullopt};
    if (setting.selector == SelectorStrategy::Random) c.seed = r.selector_seed;
    return c;
}

// Fails fast on anything that would otherwise surface mid-run.
inline void validate_resources(const ExperimentSetting& setting, const PipelineResources& r,
                               const std::vector<UserTimeline>* corpus = nullptr) {
    setting.validate();
    if (!r.backend) throw ConfigError("no language model backend configured");
    if (setting.use_criteria) r.prompts.criteria.validate();
    auto demos = take_demonstrations(r.prompts.demonstrations, setting.k);
    if (setting.use_cot)
        for (const auto& d : demos)
            if (!d.explanation || d.explanation->empty())
                throw ConfigError("chain-of-thought enabled but a demonstration has no explanation");
    if (setting.selector == SelectorStrategy::Sentiment && !r.scorer)
        throw ConfigError("sentiment selector needs a negativity scorer");
    if (setting.use_heuristic) {
        if (!r.heuristics && !r.baseline_heuristic)
            throw ConfigError("full-data mode needs answer heuristics (--heuristics) or the baseline heuristic");
        if (r.baseline_heuristic && !r.scorer) throw ConfigError("baseline heuristic needs a negativity scorer");
        if (corpus && r.heuristics && !r.baseline_heuristic)
            for (const auto& t : *corpus)
                if (!r.heuristics->count(t.user_id))
                    throw ConfigError("no answer heuristic for user " + t.user_id);
    }
}

inline std::optional<AnswerHeuristic> heuristic_for(const UserTimeline& t, const ExperimentSetting& setting,
                                                    const PipelineResources& r) {
    if (!setting.use_heuristic) return std::nullopt;
    if (r.heuristics)
        if (auto it = r.heuristics->find(t.user_id); it != r.heuristics->end()) return it->second;
    if (r.baseline_heuristic && r.scorer) return baseline_heuristic(t, *r.scorer);
    throw ConfigError("no answer heuristic for user " + t.user_id);
}

// describe -> select -> fit to budget -> build prompt -> complete -> parse.
// Throws GatewayError / UnparseableOutput from the last two stages.
inline DiagnoseResult diagnose_timeline(const UserTimeline& timeline, const ExperimentSetting& setting,
                                        const PipelineResources& r) {
    validate(timeline);
    validate_resources(setting, r);
    DiagnoseResult result;

    const UserTimeline described = r.descriptor ? describe(timeline, *r.descriptor, &result.warnings) : timeline;
    const auto demos = take_demonstrations(r.prompts.demonstrations, setting.k);
    const auto heuristic = heuristic_for(described, setting, r);

    auto ranked = select_ranked(described.posts, selector_config(setting, r), r.scorer.get(), &result.warnings,
                                r.max_parallel);
    const long overhead = diagnosis_overhead(setting, r.prompts.criteria, demos, heuristic, r.prompt_options);
    auto fitted = fit_to_budget(ranked, r.prompt_options.token_budget, overhead, r.prompt_options.chars_per_token);
    if (fitted.size() < ranked.size())
        result.warnings.push_back("token budget dropped " + std::to_string(ranked.size() - fitted.size()) + " post(s)");
    sort_chronologically(fitted);
    result.selected_posts = std::move(fitted);

    result.prompt = build_diagnosis_prompt(setting, r.prompts.criteria, demos, result.selected_posts, heuristic,
                                           r.prompt_options);
    if (r.observer) r.observer(timeline.user_id, result.prompt);

    CompletionRequest req;
    req.prompt = result.prompt;
    req.max_output_tokens = r.max_output_tokens;
    req.temperature = kDiagnosisTemperature;
    const auto raw = r.backend->complete(req);

    std::vector<std::string> ids;
    for (const auto& p : result.selected_posts) ids.push_back(p.post_id);
    result.diagnosis = parse_diagnosis(raw, setting, ids);
    return result;
}

// Every knob that can change pipeline output, in canonical form.
inline json pipeline_config_json(const ExperimentSetting& setting, const PipelineResources& r) {
    json j;
    j["setting"] = to_json(setting);
    j["prompts"] = to_json(r.prompts);
    j["backend"] = r.backend ? r.backend->identity() : "";
    j["scorer"] = r.scorer ? r.scorer->identity() : "";
    j["descriptor"] = r.descriptor.has_value();
    j["selector_seed"] = setting.selector == SelectorStrategy::Random ? json(r.selector_seed) : json(nullptr);
    j["token_budget"] = r.prompt_options.token_budget;
    j["chars_per_token"] = r.prompt_options.chars_per_token;
    j["max_output_tokens"] = r.max_output_tokens;
    j["baseline_heuristic"] = r.baseline_heuristic;
    if (r.heuristics) {
        std::string all;
        for (const auto& [id, h] : *r.heuristics) all += jsonio::dump_canonical(to_json(h), -1) + "\n";
        j["heuristics"] = text::sha256_hex(all);
    } else {
        j["heuristics"] = nullptr;
    }
    return j;
}

inline std::string config_digest(const json& config) { return text::sha256_hex(jsonio::dump_canonical(config, -1)); }

}  // namespace chatdiag
