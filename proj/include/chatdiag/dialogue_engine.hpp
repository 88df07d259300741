#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chatdiag/core_model.hpp"
#include "chatdiag/llm_gateway.hpp"
#include "chatdiag/prompt_builder.hpp"

namespace chatdiag {

enum class SessionStatus { AwaitingUser, AwaitingSystem, Ended };

inline const char* to_string(SessionStatus s) {
    switch (s) {
    case SessionStatus::AwaitingUser: return "awaiting_user";
    case SessionStatus::AwaitingSystem: return "awaiting_system";
    case SessionStatus::Ended: return "ended";
    }
    return "?";
}

// Oldest turns left out of a round's prompt to fit the token budget.
struct BudgetEvent {
    int round = 0;
    int dropped_turns = 0;
    bool operator==(const BudgetEvent&) const = default;
};

struct DialogueSession {
    std::string session_id;
    std::string timeline_ref;
    std::vector<Post> selected_posts;
    Diagnosis diagnosis;
    std::vector<DialogueTurn> history;
    SessionStatus status = SessionStatus::AwaitingUser;
    std::optional<std::string> error;
    // Input of the last step whose model call failed; a retry may resend it.
    std::optional<std::string> pending_input;
    std::vector<BudgetEvent> budget_events;

    bool operator==(const DialogueSession&) const = default;
};

// System, User, System, ... with contiguous indices; status matches parity
// (odd length awaits the user, even non-empty length awaits the system).
inline bool alternation_holds(const DialogueSession& s) {
    for (std::size_t i = 0; i < s.history.size(); ++i) {
        const auto& t = s.history[i];
        if (t.index != static_cast<int>(i) || t.text.empty()) return false;
        if (t.speaker != (i % 2 == 0 ? Speaker::System : Speaker::User)) return false;
    }
    switch (s.status) {
    case SessionStatus::AwaitingUser: return s.history.size() % 2 == 1;
    case SessionStatus::AwaitingSystem: return !s.history.empty() && s.history.size() % 2 == 0;
    case SessionStatus::Ended: return true;
    }
    return false;
}

// Templated from the diagnosis fields; shown before the first system turn.
inline std::string render_diagnosis_display(const Diagnosis& d) {
    std::string out = "Diagnosis: " + to_string(d.label);
    if (!d.explanation.empty()) out += "\nExplanation: " + d.explanation;
    return out;
}

struct DialogueOptions {
    PromptOptions prompt_options;
    double temperature = kDialogueTemperature;
    int max_output_tokens = 512;
};

inline std::function<std::string()> random_session_ids() {
    auto state = std::make_shared<std::pair<std::mutex, std::mt19937_64>>();
    state->second.seed((static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}());
    return [state] {
        std::lock_guard lock(state->first);
        unsigned char bytes[16];
        for (int i = 0; i < 2; ++i) {
            auto v = state->second();
            for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(v >> (8 * b));
        }
        return text::to_hex(bytes, sizeof bytes);
    };
}

// Interactive loop: show the diagnosis, open with an unprompted system turn,
// then alternate user input and system responses until ended.
class DialogueEngine {
public:
    using DisplaySink = std::function<void(const std::string&)>;

    explicit DialogueEngine(std::shared_ptr<LlmBackend> backend, DialogueOptions options = {},
                            std::function<std::string()> ids = random_session_ids(), DisplaySink display = {})
        : backend_(std::move(backend)), options_(std::move(options)), ids_(std::move(ids)), display_(std::move(display)) {
        if (!backend_) throw ConfigError("dialogue engine needs a backend");
    }

    void set_display(DisplaySink sink) { display_ = std::move(sink); }

    // Never throws for backend trouble: a failed opening call yields an Ended
    // session carrying the error.
    DialogueSession start_session(const std::string& timeline_ref, std::vector<Post> selected_posts,
                                  Diagnosis diagnosis) const {
        DialogueSession s;
        s.session_id = ids_();
        s.timeline_ref = timeline_ref;
        s.selected_posts = std::move(selected_posts);
        s.diagnosis = std::move(diagnosis);
        s.status = SessionStatus::AwaitingSystem;
        show(render_diagnosis_display(s.diagnosis));
        try {
            auto response = respond(s, std::nullopt);
            append(s, Speaker::System, response);
            s.status = SessionStatus::AwaitingUser;
            show(response);
        } catch (const std::exception& e) {
            s.status = SessionStatus::Ended;
            s.error = e.what();
        }
        return s;
    }

    // Appends the user turn and the system reply. On backend failure the
    // session is left awaiting the user with `pending_input` set, and the
    // error is rethrown.
    std::string step(DialogueSession& session, const std::string& user_input) const {
        if (session.status == SessionStatus::Ended) throw StateError("session " + session.session_id + " has ended");
        if (session.status != SessionStatus::AwaitingUser)
            throw StateError("session " + session.session_id + " is not awaiting user input");
        if (text::trim(user_input).empty()) throw ValidationError("session " + session.session_id, "text", "must be non-empty");

        DialogueSession next = session;
        append(next, Speaker::User, user_input);
        next.status = SessionStatus::AwaitingSystem;
        std::string response;
        try {
            response = respond(next, user_input);
        } catch (const std::exception& e) {
            session.pending_input = user_input;
            session.error = e.what();
            throw;
        }
        append(next, Speaker::System, response);
        next.status = SessionStatus::AwaitingUser;
        next.pending_input.reset();
        next.error.reset();
        session = std::move(next);
        show(response);
        return response;
    }

    // Builds the prompt a step with `user_input` would send, without calling
    // the model. Records budget events on `session`.
    PromptText prompt_for(DialogueSession& session, const std::optional<std::string>& user_input) const {
        // History excludes the turn being answered: the current input goes in "Input:".
        std::vector<DialogueTurn> window = session.history;
        if (user_input && !window.empty() && window.back().speaker == Speaker::User) window.pop_back();
        int dropped = 0;
        for (;;) {
            try {
                auto p = build_dialogue_prompt(user_input, session.selected_posts, session.diagnosis, window,
                                               options_.prompt_options);
                if (dropped > 0) session.budget_events.push_back({round_of(session), dropped});
                return p;
            } catch (const BudgetError&) {
                if (window.size() < 2) throw;
                window.erase(window.begin(), window.begin() + 2);
                dropped += 2;
            }
        }
    }

    const DialogueOptions& options() const { return options_; }

private:
    static int round_of(const DialogueSession& s) {
        return static_cast<int>(std::count_if(s.history.begin(), s.history.end(),
                                              [](const DialogueTurn& t) { return t.speaker == Speaker::System; }));
    }

    static void append(DialogueSession& s, Speaker who, const std::string& text) {
        s.history.push_back({who, text, static_cast<int>(s.history.size())});
    }

    std::string respond(DialogueSession& s, const std::optional<std::string>& user_input) const {
        CompletionRequest req;
        req.prompt = prompt_for(s, user_input);
        req.temperature = options_.temperature;
        req.max_output_tokens = options_.max_output_tokens;
        auto response = backend_->complete(req);
        if (text::trim(response).empty())
            throw GatewayError(GatewayErrorKind::BadResponse, "empty dialogue response", prompt_digest(req.prompt.body));
        return response;
    }

    void show(const std::string& text) const {
        if (display_) display_(text);
    }

    std::shared_ptr<LlmBackend> backend_;
    DialogueOptions options_;
    std::function<std::string()> ids_;
    DisplaySink display_;
};

// Idempotent; history is kept as-is.
inline DialogueSession end_session(DialogueSession session) {
    session.status = SessionStatus::Ended;
    return session;
}

inline json to_json(const DialogueTurn& t) {
    return {{"speaker", to_string(t.speaker)}, {"text", t.text}, {"index", t.index}};
}

inline json to_json(const DialogueSession& s) {
    json history = json::array();
    for (const auto& t : s.history) history.push_back(to_json(t));
    json posts = json::array();
    for (const auto& p : s.selected_posts) posts.push_back(to_json(p));
    json events = json::array();
    for (const auto& e : s.budget_events) events.push_back({{"round", e.round}, {"dropped_turns", e.dropped_turns}});
    return {{"session_id", s.session_id},
            {"timeline_ref", s.timeline_ref},
            {"selected_posts", posts},
            {"diagnosis", to_json(s.diagnosis)},
            {"history", history},
            {"status", to_string(s.status)},
            {"error", s.error ? json(*s.error) : json(nullptr)},
            {"pending_input", s.pending_input ? json(*s.pending_input) : json(nullptr)},
            {"budget_events", events}};
}

inline DialogueSession session_from_json(const json& j) {
    DialogueSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.timeline_ref = j.value("timeline_ref", "");
    for (const auto& p : j.value("selected_posts", json::array())) {
        Post post;
        post.post_id = p.at("post_id").get<std::string>();
        post.timestamp = parse_timestamp(p.at("timestamp").get<std::string>());
        post.text = p.value("text", "");
        for (const auto& img : p.value("images", json::array())) {
            ImageRef r;
            if (img.contains("uri")) r.uri = img["uri"].get<std::string>();
            if (img.contains("caption")) r.caption = img["caption"].get<std::string>();
            if (img.contains("ocr_text")) r.ocr_text = img["ocr_text"].get<std::string>();
            post.images.push_back(std::move(r));
        }
        s.selected_posts.push_back(std::move(post));
    }
    s.diagnosis = diagnosis_from_json(j.at("diagnosis"));
    for (const auto& t : j.value("history", json::array()))
        s.history.push_back({t.at("speaker").get<std::string>() == "System" ? Speaker::System : Speaker::User,
                             t.at("text").get<std::string>(), t.at("index").get<int>()});
    auto status = j.value("status", "awaiting_user");
    s.status = status == "ended" ? SessionStatus::Ended
               : status == "awaiting_system" ? SessionStatus::AwaitingSystem
                                             : SessionStatus::AwaitingUser;
    if (j.contains("error") && j["error"].is_string()) s.error = j["error"].get<std::string>();
    if (j.contains("pending_input") && j["pending_input"].is_string()) s.pending_input = j["pending_input"].get<std::string>();
    for (const auto& e : j.value("budget_events", json::array()))
        s.budget_events.push_back({e.at("round").get<int>(), e.at("dropped_turns").get<int>()});
    return s;
}

}  // namespace chatdiag
