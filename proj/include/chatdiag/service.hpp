#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>

#include "chatdiag/dialogue_engine.hpp"
#include "chatdiag/pipeline.hpp"
#include "chatdiag/synthetic.hpp"

namespace chatdiag {

// ---------------------------------------------------------------------------
// Configuration

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::filesystem::path> scripted_rules;
    std::optional<std::filesystem::path> remote_profile;
    std::optional<std::filesystem::path> resources;       // criteria + demonstrations
    std::optional<std::filesystem::path> heuristics;
    std::optional<std::filesystem::path> image_captions;  // uri -> caption, for uri-only images
    std::optional<std::filesystem::path> persistence;     // append-only session events
    ExperimentSetting setting;
    std::uint64_t selector_seed = 0;
    long token_budget = PromptOptions{}.token_budget;
    int session_idle_timeout_seconds = 1800;
    std::vector<std::string> cors_allow_origins;
    std::optional<std::string> bearer_token;
    bool queue_concurrent_messages = true;  // false: a busy session answers 409
    std::size_t max_posts = 2000;
    std::size_t max_body_bytes = 8u << 20;

    // Exactly one backend, and every referenced file present.
    void validate() const {
        if (scripted_rules.has_value() == remote_profile.has_value())
            throw ConfigError("service: configure exactly one of scripted_rules / remote_profile");
        for (const auto* p : {&scripted_rules, &remote_profile, &resources, &heuristics, &image_captions})
            if (*p && !std::filesystem::exists(**p)) throw ConfigError("service: file not found: " + (*p)->string());
        if (port < 0 || port > 65535) throw ConfigError("service: port out of range");
        if (session_idle_timeout_seconds < 1) throw ConfigError("service: session_idle_timeout_seconds must be >= 1");
        if (token_budget < 1) throw ConfigError("service: token_budget must be >= 1");
        setting.validate();
    }
};

// Relative paths resolve against `base_dir` (the config file's directory).
inline ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    ServiceConfig c;
    auto path = [&](const char* key) -> std::optional<std::filesystem::path> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        std::filesystem::path p = j[key].get<std::string>();
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    try {
        if (!j.is_object()) throw ConfigError("service config must be a JSON object");
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.scripted_rules = path("scripted_rules");
        c.remote_profile = path("remote_profile");
        c.resources = path("resources");
        c.heuristics = path("heuristics");
        c.image_captions = path("image_captions");
        c.persistence = path("persistence");
        if (j.contains("setting")) c.setting = setting_from_json(j["setting"], c.setting);
        c.selector_seed = j.value("selector_seed", c.selector_seed);
        c.token_budget = j.value("token_budget", c.token_budget);
        c.session_idle_timeout_seconds = j.value("session_idle_timeout_seconds", c.session_idle_timeout_seconds);
        c.cors_allow_origins = j.value("cors_allow_origins", c.cors_allow_origins);
        if (j.contains("bearer_token") && j["bearer_token"].is_string()) c.bearer_token = j["bearer_token"].get<std::string>();
        c.queue_concurrent_messages = j.value("queue_concurrent_messages", c.queue_concurrent_messages);
        c.max_posts = j.value("max_posts", c.max_posts);
        c.max_body_bytes = j.value("max_body_bytes", c.max_body_bytes);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("service config: ") + e.what());
    }
    return c;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("service config not found: " + path.string());
    auto c = service_config_from_json(jsonio::parse_file(path), path.parent_path());
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Service

struct ServiceResponse {
    int status = 200;
    json body;
};

class ChatService {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    // Loads every referenced file up front; throws ConfigError before any port is bound.
    explicit ChatService(ServiceConfig config, std::shared_ptr<LlmBackend> backend = nullptr,
                         std::function<std::string()> ids = random_session_ids(), Clock clock = nullptr)
        : config_(std::move(config)),
          ids_(std::move(ids)),
          clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })) {
        if (backend) {
            config_.scripted_rules.reset();
            config_.remote_profile.reset();
            resources_.backend = std::move(backend);
        } else {
            config_.validate();
            resources_.backend = config_.scripted_rules ? make_backend("scripted:" + config_.scripted_rules->string())
                                                        : make_backend("remote:" + config_.remote_profile->string());
        }
        if (config_.resources) resources_.prompts = load_prompt_resources(*config_.resources);
        if (config_.heuristics) resources_.heuristics = load_heuristics(*config_.heuristics);
        if (config_.image_captions) {
            auto provider = std::make_shared<ScriptedImageProvider>(synthetic::load_image_captions(*config_.image_captions));
            resources_.descriptor = DescriptorBackend{provider, nullptr, 1};
        }
        resources_.selector_seed = config_.selector_seed;
        resources_.prompt_options.token_budget = config_.token_budget;
        resources_.scorer = std::make_shared<LexiconScorer>(LexiconScorer::default_lexicon());
        config_.setting.validate();
        DialogueOptions dialogue;
        dialogue.prompt_options = resources_.prompt_options;
        engine_ = std::make_unique<DialogueEngine>(resources_.backend, dialogue, ids_);
        if (config_.persistence) replay(*config_.persistence);
    }

    const ServiceConfig& config() const { return config_; }

    ServiceResponse diagnose(const json& body) {
        const auto [timeline, setting] = parse_diagnose_body(body);
        auto result = diagnose_timeline(timeline, setting, resources_);
        const auto digest = config_digest(pipeline_config_json(setting, resources_));
        const auto id = text::sha256_hex(digest + "\n" + jsonio::dump_canonical(to_json(timeline), -1)).substr(0, 32);
        json out = to_json(result.diagnosis);
        out["diagnosis_id"] = id;
        out["user_id"] = timeline.user_id;
        out["config_digest"] = digest;
        out["selected_post_ids"] = json::array();
        for (const auto& p : result.selected_posts) out["selected_post_ids"].push_back(p.post_id);
        out["warnings"] = result.warnings;
        {
            std::lock_guard lock(mutex_);
            diagnoses_[id] = StoredDiagnosis{timeline.user_id, result.selected_posts, result.diagnosis};
        }
        return {200, out};
    }

    ServiceResponse create_session(const json& body) {
        StoredDiagnosis source;
        if (body.is_object() && body.contains("diagnosis_id")) {
            const auto id = body["diagnosis_id"].is_string() ? body["diagnosis_id"].get<std::string>() : "";
            std::lock_guard lock(mutex_);
            auto it = diagnoses_.find(id);
            if (it == diagnoses_.end()) return error(404, "not_found", "unknown diagnosis_id '" + id + "'");
            source = it->second;
        } else {
            const auto [timeline, setting] = parse_diagnose_body(body.is_object() && body.contains("timeline") ? body["timeline"] : body,
                                                                 body.is_object() ? body.value("setting", json::object()) : json::object());
            auto result = diagnose_timeline(timeline, setting, resources_);
            source = {timeline.user_id, result.selected_posts, result.diagnosis};
        }
        auto session = engine_->start_session(source.timeline_ref, source.selected_posts, source.diagnosis);
        if (session.status == SessionStatus::Ended)
            return error(502, "backend", session.error.value_or("opening turn failed"));
        auto entry = std::make_shared<Entry>();
        entry->session = session;
        entry->last_active = clock_();
        {
            std::lock_guard lock(mutex_);
            sweep_idle_locked();
            sessions_[session.session_id] = entry;
        }
        persist({{"event", "create"}, {"session", to_json(session)}});
        return {201, to_json(session)};
    }

    ServiceResponse post_message(const std::string& session_id, const json& body) {
        auto entry = find(session_id);
        if (!entry) return error(404, "not_found", "unknown session '" + session_id + "'");
        if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
            return error(400, "validation", "body must be {\"text\": string, \"message_id\"?: string}");
        const auto text_in = body["text"].get<std::string>();
        std::optional<std::string> message_id;
        if (body.contains("message_id") && body["message_id"].is_string()) message_id = body["message_id"].get<std::string>();

        Turnstile::Ticket ticket(entry->turnstile, config_.queue_concurrent_messages);
        if (!ticket.acquired()) return error(409, "busy", "another message for this session is in flight");
        std::lock_guard state(entry->state);
        entry->last_active = clock_();
        if (message_id) {
            if (auto it = entry->replies.find(*message_id); it != entry->replies.end()) {
                if (it->second.first != text_in)
                    return error(409, "conflict", "message_id '" + *message_id + "' was used with different text");
                return {200, it->second.second};
            }
        }
        if (entry->session.status == SessionStatus::Ended) return error(409, "ended", "session has ended");
        const auto before = entry->session.history.size();
        std::string response;
        try {
            response = engine_->step(entry->session, text_in);
        } catch (const ValidationError& e) {
            return error(400, "validation", e.what());
        } catch (const StateError& e) {
            return error(409, "state", e.what());
        } catch (const std::exception& e) {
            auto r = error(502, "backend", e.what());
            r.body["retryable"] = true;
            return r;
        }
        json out = {{"session_id", session_id},
                    {"response", response},
                    {"turn_index", entry->session.history.back().index}};
        if (message_id) {
            out["message_id"] = *message_id;
            entry->replies[*message_id] = {text_in, out};
        }
        for (std::size_t i = before; i < entry->session.history.size(); ++i) {
            json ev = {{"event", "turn"}, {"session_id", session_id}, {"turn", to_json(entry->session.history[i])}};
            if (message_id && entry->session.history[i].speaker == Speaker::System) {
                ev["message_id"] = *message_id;
                ev["user_text"] = text_in;
            }
            persist(ev);
        }
        return {200, out};
    }

    ServiceResponse get_session(const std::string& session_id) {
        auto entry = find(session_id);
        if (!entry) return error(404, "not_found", "unknown session '" + session_id + "'");
        std::lock_guard state(entry->state);
        return {200, to_json(entry->session)};
    }

    ServiceResponse end(const std::string& session_id) {
        auto entry = find(session_id);
        if (!entry) return error(404, "not_found", "unknown session '" + session_id + "'");
        std::lock_guard state(entry->state);
        const bool was_open = entry->session.status != SessionStatus::Ended;
        entry->session = end_session(entry->session);
        if (was_open) persist({{"event", "end"}, {"session_id", session_id}});
        return {200, to_json(entry->session)};
    }

    // Maps library errors onto status codes; used by the HTTP layer.
    template <class F>
    ServiceResponse guarded(F&& f) {
        try {
            return f();
        } catch (const json::exception& e) {
            return error(400, "validation", std::string("malformed JSON: ") + e.what());
        } catch (const ValidationError& e) {
            auto r = error(400, "validation", e.what());
            r.body["field"] = e.field();
            return r;
        } catch (const ParseError& e) {
            return error(400, "validation", e.what());
        } catch (const ConfigError& e) {
            return error(400, "configuration", e.what());
        } catch (const PayloadTooLarge& e) {
            return error(413, "too_large", e.what());
        } catch (const UnparseableOutput& e) {
            auto r = error(422, "unparseable", e.what());
            r.body["raw"] = e.raw();
            return r;
        } catch (const GatewayError& e) {
            auto r = error(502, "backend", e.what());
            r.body["kind"] = to_string(e.kind());
            r.body["prompt_digest"] = e.prompt_digest();
            return r;
        } catch (const BudgetError& e) {
            return error(413, "too_large", e.what());
        } catch (const std::exception& e) {
            return error(500, "internal", e.what());
        }
    }

    // Registers routes, CORS and bearer-token handling on `server`.
    void mount(httplib::Server& server) {
        server.set_payload_max_length(config_.max_body_bytes);
        server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            apply_cors(req, res);
            if (req.method == "OPTIONS") {
                res.status = 204;
                return httplib::Server::HandlerResponse::Handled;
            }
            if (config_.bearer_token && req.path != "/health" &&
                req.get_header_value("Authorization") != "Bearer " + *config_.bearer_token) {
                write(res, error(401, "unauthorized", "missing or wrong bearer token"));
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
        server.Post("/diagnose", [this](const httplib::Request& req, httplib::Response& res) {
            write(res, guarded([&] { return diagnose(parse_body(req)); }));
        });
        server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            write(res, guarded([&] { return create_session(parse_body(req)); }));
        });
        server.Post(R"(/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
            auto r = guarded([&] { return post_message(req.matches[1], parse_body(req)); });
            if (req.get_param_value("stream") == "1" && r.status == 200) {
                // One event per reply: the backend does not stream tokens.
                res.status = 200;
                res.set_content("event: message\ndata: " + r.body.dump() + "\n\nevent: done\ndata: {}\n\n",
                                "text/event-stream");
                return;
            }
            write(res, r);
        });
        server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            write(res, guarded([&] { return get_session(req.matches[1]); }));
        });
        server.Delete(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            write(res, guarded([&] { return end(req.matches[1]); }));
        });
    }

private:
    class PayloadTooLarge : public Error {
    public:
        using Error::Error;
    };

    // FIFO hand-off: tickets are served strictly in arrival order.
    struct Turnstile {
        std::mutex m;
        std::condition_variable cv;
        std::uint64_t next = 0;
        std::uint64_t serving = 0;

        class Ticket {
        public:
            Ticket(Turnstile& t, bool wait) : t_(t) {
                std::unique_lock lock(t_.m);
                if (!wait && t_.next != t_.serving) return;
                const auto mine = t_.next++;
                t_.cv.wait(lock, [&] { return t_.serving == mine; });
                held_ = true;
            }
            ~Ticket() {
                if (!held_) return;
                std::lock_guard lock(t_.m);
                ++t_.serving;
                t_.cv.notify_all();
            }
            Ticket(const Ticket&) = delete;
            Ticket& operator=(const Ticket&) = delete;
            bool acquired() const { return held_; }

        private:
            Turnstile& t_;
            bool held_ = false;
        };
    };

    struct Entry {
        Turnstile turnstile;
        std::mutex state;
        DialogueSession session;
        std::map<std::string, std::pair<std::string, json>> replies;  // message_id -> (text, body)
        std::chrono::steady_clock::time_point last_active;
    };

    struct StoredDiagnosis {
        std::string timeline_ref;
        std::vector<Post> selected_posts;
        Diagnosis diagnosis;
    };

    static ServiceResponse error(int status, const std::string& code, const std::string& message) {
        return {status, {{"error", code}, {"message", message}}};
    }

    static json parse_body(const httplib::Request& req) { return json::parse(req.body); }

    static void write(httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    void apply_cors(const httplib::Request& req, httplib::Response& res) const {
        const auto origin = req.get_header_value("Origin");
        if (origin.empty()) return;
        for (const auto& allowed : config_.cors_allow_origins) {
            if (allowed == "*" || allowed == origin) {
                res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
                res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
                res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
                res.set_header("Vary", "Origin");
                return;
            }
        }
    }

    std::pair<UserTimeline, ExperimentSetting> parse_diagnose_body(const json& body,
                                                                   const json& setting_override = json::object()) const {
        if (!body.is_object()) throw ValidationError("request", "", "body must be a JSON object");
        json timeline_json = body;
        json setting_json = setting_override;
        if (timeline_json.contains("setting")) {
            setting_json = timeline_json["setting"];
            timeline_json.erase("setting");
        }
        if (timeline_json.contains("posts") && timeline_json["posts"].is_array() &&
            timeline_json["posts"].size() > config_.max_posts)
            throw PayloadTooLarge("timeline has " + std::to_string(timeline_json["posts"].size()) +
                                  " posts; limit is " + std::to_string(config_.max_posts));
        auto timeline = timeline_from_json(timeline_json);
        auto setting = setting_from_json(setting_json, config_.setting);
        if (setting.mode == Mode::FullData && !setting_json.contains("use_heuristic")) setting.use_heuristic = true;
        if (setting.mode != Mode::FullData && !setting_json.contains("use_heuristic")) setting.use_heuristic = false;
        if (setting.mode == Mode::ZeroShot && !setting_json.contains("k")) setting.k = 0;
        return {std::move(timeline), setting};
    }

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lock(mutex_);
        sweep_idle_locked();
        auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    void sweep_idle_locked() {
        const auto now = clock_();
        const auto limit = std::chrono::seconds(config_.session_idle_timeout_seconds);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            std::unique_lock state(it->second->state, std::try_to_lock);
            if (state.owns_lock() && now - it->second->last_active > limit)
                it = sessions_.erase(it);
            else
                ++it;
        }
    }

    void persist(const json& event) {
        if (!config_.persistence) return;
        std::lock_guard lock(persist_mutex_);
        std::ofstream out(*config_.persistence, std::ios::app | std::ios::binary);
        if (!out) throw IoError(config_.persistence->string(), "cannot append session event");
        out << jsonio::dump_canonical(event, -1) << "\n";
    }

    void replay(const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) return;
        jsonio::for_each_jsonl(path, [&](const json& ev, std::size_t line) {
            const auto kind = ev.value("event", "");
            if (kind == "create") {
                auto entry = std::make_shared<Entry>();
                entry->session = session_from_json(ev.at("session"));
                entry->last_active = clock_();
                sessions_[entry->session.session_id] = entry;
                return;
            }
            auto it = sessions_.find(ev.value("session_id", ""));
            if (it == sessions_.end()) throw ParseError("session event for unknown session", line);
            auto& s = it->second->session;
            if (kind == "turn") {
                const auto& t = ev.at("turn");
                s.history.push_back({t.at("speaker").get<std::string>() == "System" ? Speaker::System : Speaker::User,
                                     t.at("text").get<std::string>(), t.at("index").get<int>()});
                s.status = s.history.size() % 2 == 1 ? SessionStatus::AwaitingUser : SessionStatus::AwaitingSystem;
                if (ev.contains("message_id"))
                    it->second->replies[ev["message_id"].get<std::string>()] = {
                        ev.value("user_text", ""),
                        {{"session_id", s.session_id}, {"response", s.history.back().text},
                         {"turn_index", s.history.back().index}, {"message_id", ev["message_id"]}}};
            } else if (kind == "end") {
                s.status = SessionStatus::Ended;
            } else {
                throw ParseError("unknown session event '" + kind + "'", line);
            }
        });
    }

    ServiceConfig config_;
    PipelineResources resources_;
    std::function<std::string()> ids_;
    Clock clock_;
    std::unique_ptr<DialogueEngine> engine_;
    std::mutex mutex_;
    std::mutex persist_mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::map<std::string, StoredDiagnosis> diagnoses_;
};

}  // namespace chatdiag
