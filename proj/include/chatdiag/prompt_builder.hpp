#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chatdiag/answer_heuristic.hpp"
#include "chatdiag/core_model.hpp"
#include "chatdiag/image_descriptor.hpp"
#include "chatdiag/prompt_text.hpp"

namespace chatdiag {

inline constexpr const char* kDiagnosisQuestion =
    "Analyze someone's tweets using DSM-5 to determine if they are depressed.";
inline constexpr const char* kOptionsLine = "[A.depressed B.non-depressed]";
inline constexpr const char* kDialogueInstruction =
    "Chat based on user's tweets to gather psychological information and provide advice.";
inline constexpr const char* kDemoDelimiter = "Example:";
inline constexpr const char* kTruncationMarker = "\xE2\x80\xA6";  // U+2026

struct DiagnosticCriteria {
    std::string title;
    std::vector<std::string> items;  // index i+1 is criterion i+1
    std::string threshold_note;

    bool operator==(const DiagnosticCriteria&) const = default;

    void validate() const {
        if (items.size() != 9)
            throw ValidationError("criteria", "items", "expected exactly 9 items, got " + std::to_string(items.size()));
        for (const auto& item : items)
            if (text::trim(item).empty()) throw ValidationError("criteria", "items", "empty criterion text");
    }

    // Major depressive disorder, criterion A, abbreviated. Items 1 and 6 keep
    // the wording quoted in the case study; the rest are configurable.
    static DiagnosticCriteria dsm5_default() {
        return {"DSM-5 major depressive disorder (abbreviated):",
                {
                    "Depressed Mood, e.g., feeling angry, hopeless",
                    "Diminished interest or pleasure in all, or almost all, activities",
                    "Significant weight loss or gain, or change in appetite",
                    "Insomnia or hypersomnia",
                    "Psychomotor agitation or retardation",
                    "Fatigue. Or loss of energy",
                    "Feelings of worthlessness or excessive or inappropriate guilt",
                    "Diminished ability to think or concentrate, or indecisiveness",
                    "Recurrent thoughts of death, suicidal ideation, or a suicide attempt",
                },
                "Five or more symptoms present during the same 2-week period, at least one being "
                "(1) depressed mood or (2) loss of interest or pleasure."};
    }
};

struct Demonstration {
    std::string posts_text;
    Label answer = Label::Depressed;
    std::optional<std::string> explanation;

    bool operator==(const Demonstration&) const = default;
};

struct PromptResources {
    DiagnosticCriteria criteria = DiagnosticCriteria::dsm5_default();
    std::vector<Demonstration> demonstrations;
};

// One demonstration per class with hand-written reasoning steps.
inline std::vector<Demonstration> builtin_demonstrations() {
    return {
        {"1. Lying awake until 4am again. Haven't slept properly in weeks.\n"
         "2. Everything feels pointless lately, I can't even enjoy music anymore.\n"
         "3. So tired all the time. Skipped class again because I couldn't get out of bed.\n"
         "4. I feel like such a burden to everyone around me.",
         Label::Depressed,
         "Post 1 describes weeks of insomnia, which meets criterion 4. Post 2 shows loss of interest in "
         "activities the user used to enjoy, which meets criterion 2. Post 3 reports constant fatigue and "
         "loss of energy, which meets criterion 6. Post 4 expresses feelings of worthlessness, which meets "
         "criterion 7. Several symptoms persist over weeks, so the user is likely depressed."},
        {"1. Finally finished the marathon training plan, legs are sore but worth it!\n"
         "2. Dinner with the family tonight, mom made her famous lasagna.\n"
         "3. Long day at work but the team shipped the release. Weekend off now.\n"
         "4. New book arrived, staying in with tea and reading tonight.",
         Label::NonDepressed,
         "The posts describe regular activities with enjoyment, time with family and normal energy. The "
         "tiredness in post 3 follows a busy workday and is not persistent. No post matches a DSM symptom, "
         "so the user is not depressed."},
    };
}

inline PromptResources default_prompt_resources() { return {DiagnosticCriteria::dsm5_default(), builtin_demonstrations()}; }

inline json to_json(const Demonstration& d) {
    json j = {{"posts_text", d.posts_text}, {"answer", std::string(1, option_letter(d.answer))}};
    if (d.explanation) j["explanation"] = *d.explanation;
    return j;
}

inline json to_json(const PromptResources& r) {
    json demos = json::array();
    for (const auto& d : r.demonstrations) demos.push_back(to_json(d));
    return {{"criteria", {{"title", r.criteria.title}, {"items", r.criteria.items}, {"threshold_note", r.criteria.threshold_note}}},
            {"demonstrations", demos}};
}

inline PromptResources prompt_resources_from_json(const json& j) {
    PromptResources r;
    try {
        const auto& c = j.at("criteria");
        r.criteria.title = c.value("title", "");
        r.criteria.items = c.at("items").get<std::vector<std::string>>();
        r.criteria.threshold_note = c.value("threshold_note", "");
        for (const auto& dj : j.value("demonstrations", json::array())) {
            Demonstration d;
            d.posts_text = dj.at("posts_text").get<std::string>();
            auto answer = dj.at("answer").get<std::string>();
            if (answer == "A" || answer == "depressed") d.answer = Label::Depressed;
            else if (answer == "B" || answer == "non-depressed") d.answer = Label::NonDepressed;
            else throw ValidationError("demonstration", "answer", "must be A|B|depressed|non-depressed");
            if (dj.contains("explanation") && !dj["explanation"].is_null())
                d.explanation = dj["explanation"].get<std::string>();
            if (text::trim(d.posts_text).empty()) throw ValidationError("demonstration", "posts_text", "must be non-empty");
            r.demonstrations.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw ValidationError("prompt resources", "", e.what());
    }
    r.criteria.validate();
    return r;
}

inline PromptResources load_prompt_resources(const std::filesystem::path& path) {
    return prompt_resources_from_json(jsonio::parse_file(path));
}

// k demonstrations alternating depressed / non-depressed, in library order
// within each class.
inline std::vector<Demonstration> take_demonstrations(const std::vector<Demonstration>& library, int k) {
    if (k <= 0) return {};
    if (static_cast<std::size_t>(k) > library.size())
        throw ConfigError("k = " + std::to_string(k) + " demonstrations requested but library has " +
                          std::to_string(library.size()));
    std::vector<const Demonstration*> pos, neg;
    for (const auto& d : library) (d.answer == Label::Depressed ? pos : neg).push_back(&d);
    std::vector<Demonstration> out;
    std::size_t ip = 0, in = 0;
    while (out.size() < static_cast<std::size_t>(k)) {
        bool want_pos = out.size() % 2 == 0;
        if ((want_pos && ip < pos.size()) || in >= neg.size()) out.push_back(*pos[ip++]);
        else out.push_back(*neg[in++]);
    }
    return out;
}

struct PromptOptions {
    long token_budget = 3000;
    double chars_per_token = 4.0;
};

// Question / Options / Posts / Answer [/ Explanation] block for one labelled sample.
inline std::string render_demonstration(const Demonstration& demo, bool use_cot) {
    if (text::trim(demo.posts_text).empty()) throw ConfigError("demonstration has empty posts_text");
    if (use_cot && (!demo.explanation || text::trim(*demo.explanation).empty()))
        throw ConfigError("chain-of-thought demonstration needs an explanation");
    std::string out;
    out += "Question: ";
    out += kDiagnosisQuestion;
    out += "\nOptions: ";
    out += kOptionsLine;
    out += "\nPosts:\n" + demo.posts_text;
    out += "\nAnswer: ";
    out += option_letter(demo.answer);
    if (use_cot) out += "\nExplanation: " + *demo.explanation;
    return out;
}

namespace detail {

inline std::string numbered_post_line(std::size_t number, const Post& post) {
    return std::to_string(number) + ". " + text::single_line(render_post_text(post)) + "\n";
}

inline std::string posts_section(const std::vector<Post>& posts) {
    std::string out = "Posts:\n";
    for (std::size_t i = 0; i < posts.size(); ++i) out += numbered_post_line(i + 1, posts[i]);
    return out;
}

inline std::string criteria_section(const DiagnosticCriteria& c) {
    std::string out = "Diagnosis criteria:\n";
    if (!c.title.empty()) out += c.title + "\n";
    for (std::size_t i = 0; i < c.items.size(); ++i) out += std::to_string(i + 1) + ". " + c.items[i] + "\n";
    if (!c.threshold_note.empty()) out += c.threshold_note + "\n";
    return out;
}

inline std::string demonstrations_section(const std::vector<Demonstration>& demos, bool use_cot) {
    std::string out = "Demonstrations:\n";
    for (std::size_t i = 0; i < demos.size(); ++i) {
        if (i > 0) out += "\n";
        out += std::string(kDemoDelimiter) + "\n" + render_demonstration(demos[i], use_cot) + "\n";
    }
    return out;
}

// Assembles the diagnosis prompt without precondition or budget checks.
inline PromptText assemble_diagnosis(const ExperimentSetting& setting, const DiagnosticCriteria& criteria,
                                     const std::vector<Demonstration>& demos, const std::vector<Post>& posts,
                                     const std::optional<AnswerHeuristic>& heuristic, const PromptOptions& options) {
    PromptText p;
    auto& b = p.body;
    b += "Question: ";
    b += kDiagnosisQuestion;
    b += "\n";
    p.sections.push_back(Section::Question);
    b += "Options: ";
    b += kOptionsLine;
    b += "\n";
    p.sections.push_back(Section::Options);
    if (setting.use_criteria) {
        b += criteria_section(criteria);
        p.sections.push_back(Section::DiagnosisCriteria);
    }
    if (setting.k > 0) {
        b += demonstrations_section(demos, setting.use_cot);
        p.sections.push_back(Section::Demonstrations);
    }
    b += posts_section(posts);
    p.sections.push_back(Section::Posts);
    if (setting.use_heuristic && heuristic) {
        b += render_candidate_line(*heuristic) + "\n";
        p.sections.push_back(Section::AnswerCandidate);
    }
    b += "Answer:";
    p.sections.push_back(Section::Answer);
    if (setting.use_cot) {
        b += "\nExplanation:";
        p.sections.push_back(Section::Explanation);
    }
    p.estimated_tokens = token_estimate(b, options.chars_per_token);
    return p;
}

}  // namespace detail

// Diagnosis prompt: Question, Options, [Diagnosis criteria], [Demonstrations],
// Posts, [Answer candidate], Answer cue, [Explanation cue].
inline PromptText build_diagnosis_prompt(const ExperimentSetting& setting, const DiagnosticCriteria& criteria,
                                         const std::vector<Demonstration>& demos, const std::vector<Post>& posts,
                                         const std::optional<AnswerHeuristic>& heuristic,
                                         const PromptOptions& options = {}) {
    setting.validate();
    if (demos.size() != static_cast<std::size_t>(setting.k))
        throw ConfigError("expected " + std::to_string(setting.k) + " demonstrations, got " +
                          std::to_string(demos.size()));
    if (posts.empty()) throw ConfigError("diagnosis prompt needs at least one post");
    if (setting.use_heuristic != heuristic.has_value())
        throw ConfigError(setting.use_heuristic ? "answer heuristic required but missing"
                                                : "answer heuristic given but the setting disables it");
    if (setting.use_criteria) criteria.validate();
    auto p = detail::assemble_diagnosis(setting, criteria, demos, posts, heuristic, options);
    if (p.estimated_tokens > options.token_budget) throw BudgetError(p.estimated_tokens, options.token_budget);
    return p;
}

// Token cost of everything in the diagnosis prompt except the post lines.
inline long diagnosis_overhead(const ExperimentSetting& setting, const DiagnosticCriteria& criteria,
                               const std::vector<Demonstration>& demos, const std::optional<AnswerHeuristic>& heuristic,
                               const PromptOptions& options = {}) {
    return detail::assemble_diagnosis(setting, criteria, demos, {}, heuristic, options).estimated_tokens;
}

// Drops the lowest-priority posts (end of the ranking) until the post lines fit
// in budget - fixed_overhead. If the top post alone overflows, its rendered
// text is cut at a scalar boundary and marked with an ellipsis.
inline std::vector<Post> fit_to_budget(const std::vector<Post>& ranked, long budget, long fixed_overhead,
                                       double chars_per_token = 4.0) {
    if (budget < fixed_overhead)
        throw ConfigError("token budget " + std::to_string(budget) + " is below the fixed overhead " +
                          std::to_string(fixed_overhead));
    if (ranked.empty()) return {};
    const long available = budget - fixed_overhead;
    const std::string widest_prefix = std::to_string(ranked.size()) + ". ";
    auto cost = [&](const Post& p) {
        return token_estimate(widest_prefix + text::single_line(render_post_text(p)) + "\n", chars_per_token);
    };

    std::vector<Post> kept = ranked;
    long total = 0;
    for (const auto& p : kept) total += cost(p);
    while (kept.size() > 1 && total > available) {
        total -= cost(kept.back());
        kept.pop_back();
    }
    if (total <= available) return kept;

    // A single post remains and still overflows.
    Post& top = kept.front();
    const std::string rendered = text::single_line(render_post_text(top));
    const long fixed_chars = static_cast<long>(text::count_scalars(widest_prefix)) + 2;  // "\n" + marker
    long keep = static_cast<long>(std::floor(static_cast<double>(available) * chars_per_token)) - fixed_chars;
    for (;; --keep) {
        std::size_t n = keep > 0 ? static_cast<std::size_t>(keep) : 0;
        top.text = std::string(text::trim(rendered.substr(0, text::scalar_prefix_bytes(rendered, n)))) + kTruncationMarker;
        top.images.clear();
        if (cost(top) <= available || n == 0) break;
    }
    return kept;
}

// Dialogue prompt: Instruction, Posts, Diagnosis, Dialogue history, Input.
// A missing user input renders as the literal "None" (opening turn).
inline PromptText build_dialogue_prompt(const std::optional<std::string>& user_input, const std::vector<Post>& posts,
                                        const Diagnosis& diagnosis, const std::vector<DialogueTurn>& history,
                                        const PromptOptions& options = {}) {
    PromptText p;
    auto& b = p.body;
    b += "Instruction: ";
    b += kDialogueInstruction;
    b += "\n";
    p.sections.push_back(Section::Instruction);
    b += detail::posts_section(posts);
    p.sections.push_back(Section::Posts);
    b += "Diagnosis: " + to_string(diagnosis.label);
    if (!diagnosis.explanation.empty()) b += ", " + diagnosis.explanation;
    b += "\n";
    p.sections.push_back(Section::Diagnosis);
    b += "Dialogue history:\n";
    for (const auto& turn : history) b += std::string(to_string(turn.speaker)) + ": " + turn.text + "\n";
    p.sections.push_back(Section::DialogueHistory);
    b += "Input: " + (user_input ? *user_input : std::string("None"));
    p.sections.push_back(Section::Input);
    p.estimated_tokens = token_estimate(b, options.chars_per_token);
    if (p.estimated_tokens > options.token_budget) throw BudgetError(p.estimated_tokens, options.token_budget);
    return p;
}

}  // namespace chatdiag
