#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <httplib.h>

#include "chatdiag/errors.hpp"
#include "chatdiag/json_io.hpp"
#include "chatdiag/prompt_text.hpp"
#include "chatdiag/text.hpp"

namespace chatdiag {

inline constexpr double kDiagnosisTemperature = 0.0;
inline constexpr double kDialogueTemperature = 0.7;

struct CompletionRequest {
    PromptText prompt;
    int max_output_tokens = 512;
    double temperature = kDiagnosisTemperature;
    std::vector<std::string> stop_sequences;

    void validate() const {
        if (max_output_tokens < 1) throw ConfigError("completion: max_output_tokens must be >= 1");
        if (temperature < 0.0) throw ConfigError("completion: temperature must be >= 0");
    }
};

inline std::string prompt_digest(std::string_view body) { return text::sha256_hex(body); }

// Text in, text out. Implementations must be safe to call from several threads.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual std::string complete(const CompletionRequest& request) = 0;
    // Stable description used in config digests (never contains secrets).
    virtual std::string identity() const = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

struct ContainsMatch {
    std::vector<std::string> all_of;
    bool operator==(const ContainsMatch&) const = default;
};

struct DigestMatch {
    std::string prompt_digest;
    bool operator==(const DigestMatch&) const = default;
};

struct ScriptedRule {
    std::variant<ContainsMatch, DigestMatch> match;
    std::string response;

    bool matches(std::string_view body, const std::string& digest) const {
        if (const auto* d = std::get_if<DigestMatch>(&match)) return d->prompt_digest == digest;
        for (const auto& needle : std::get<ContainsMatch>(match).all_of)
            if (body.find(needle) == std::string_view::npos) return false;
        return true;
    }

    bool operator==(const ScriptedRule&) const = default;
};

inline json to_json(const ScriptedRule& rule) {
    json match;
    if (const auto* d = std::get_if<DigestMatch>(&rule.match))
        match = {{"prompt_digest", d->prompt_digest}};
    else
        match = {{"contains", std::get<ContainsMatch>(rule.match).all_of}};
    return {{"match", match}, {"response", rule.response}};
}

inline ScriptedRule rule_from_json(const json& j, std::size_t line = 0) {
    const std::string subject = "scripted rule";
    if (!j.is_object() || !j.contains("match") || !j["match"].is_object())
        throw ValidationError(subject, "match", "missing or not an object", line);
    const auto& m = j["match"];
    const bool has_contains = m.contains("contains");
    const bool has_digest = m.contains("prompt_digest");
    if (has_contains == has_digest)
        throw ValidationError(subject, "match", "exactly one of contains / prompt_digest required", line);
    ScriptedRule rule;
    try {
        if (has_contains) {
            ContainsMatch c{m["contains"].get<std::vector<std::string>>()};
            if (c.all_of.empty()) throw ValidationError(subject, "contains", "must be non-empty", line);
            rule.match = std::move(c);
        } else {
            auto d = text::to_lower(m["prompt_digest"].get<std::string>());
            if (d.size() != 64) throw ValidationError(subject, "prompt_digest", "expected 64 hex chars", line);
            rule.match = DigestMatch{std::move(d)};
        }
        rule.response = jsonio::require<std::string>(j, "response", subject, line);
    } catch (const json::exception& e) {
        throw ValidationError(subject, "match", e.what(), line);
    }
    return rule;
}

// First rule in file order whose match succeeds wins.
class ScriptedBackend : public LlmBackend {
public:
    explicit ScriptedBackend(std::vector<ScriptedRule> rules, std::string source = "inline")
        : rules_(std::move(rules)) {
        std::string all;
        for (const auto& r : rules_) all += jsonio::dump_canonical(to_json(r), -1) + "\n";
        identity_ = "scripted:" + source + "#" + text::sha256_hex(all);
    }

    static ScriptedBackend from_file(const std::filesystem::path& path) {
        std::vector<ScriptedRule> rules;
        jsonio::for_each_jsonl(path, [&](const json& j, std::size_t line) { rules.push_back(rule_from_json(j, line)); });
        return ScriptedBackend(std::move(rules), path.filename().string());
    }

    std::string complete(const CompletionRequest& request) override {
        request.validate();
        const auto digest = prompt_digest(request.prompt.body);
        for (const auto& rule : rules_)
            if (rule.matches(request.prompt.body, digest)) return rule.response;
        throw GatewayError(GatewayErrorKind::Unscripted, "no scripted rule matches prompt digest " + digest, digest);
    }

    std::string identity() const override { return identity_; }
    const std::vector<ScriptedRule>& rules() const { return rules_; }

private:
    std::vector<ScriptedRule> rules_;
    std::string identity_;
};

// Forwards to another backend and appends every exchange to a JSONL file in
// the scripted rule format, so the file replays through ScriptedBackend.
class RecordingBackend : public LlmBackend {
public:
    RecordingBackend(std::shared_ptr<LlmBackend> inner, std::filesystem::path transcript)
        : inner_(std::move(inner)), path_(std::move(transcript)) {}

    std::string complete(const CompletionRequest& request) override {
        auto response = inner_->complete(request);
        json line = to_json(ScriptedRule{DigestMatch{prompt_digest(request.prompt.body)}, response});
        line["prompt"] = request.prompt.body;
        std::lock_guard lock(mutex_);
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) throw IoError(path_.string(), "cannot append transcript");
        out << jsonio::dump_canonical(line, -1) << "\n";
        return response;
    }

    std::string identity() const override { return inner_->identity(); }

private:
    std::shared_ptr<LlmBackend> inner_;
    std::filesystem::path path_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Remote backend

enum class Dialect { Completion, Chat };

struct ModelProfile {
    std::string endpoint;  // full URL, e.g. https://api.openai.com/v1/chat/completions
    std::string model;
    Dialect dialect = Dialect::Chat;
    std::string api_key_env = "LLM_API_KEY";
    // JSON pointer to the completion text in the response body; empty = dialect default.
    std::string response_pointer;
    json extra_request_fields = json::object();
    int max_retries = 3;
    int initial_backoff_ms = 500;
    int timeout_seconds = 60;
    std::size_t max_concurrency = 4;
    double requests_per_second = 0.0;  // 0 = unlimited

    std::string effective_pointer() const {
        if (!response_pointer.empty()) return response_pointer;
        return dialect == Dialect::Chat ? "/choices/0/message/content" : "/choices/0/text";
    }
};

inline ModelProfile profile_from_json(const json& j) {
    ModelProfile p;
    try {
        p.endpoint = jsonio::require<std::string>(j, "endpoint", "model profile");
        p.model = jsonio::require<std::string>(j, "model", "model profile");
        auto dialect = j.value("dialect", "chat");
        if (dialect == "chat") p.dialect = Dialect::Chat;
        else if (dialect == "completion") p.dialect = Dialect::Completion;
        else throw ConfigError("model profile: dialect must be chat|completion");
        p.api_key_env = j.value("api_key_env", p.api_key_env);
        p.response_pointer = j.value("response_pointer", "");
        p.extra_request_fields = j.value("extra_request_fields", json::object());
        p.max_retries = j.value("max_retries", p.max_retries);
        p.initial_backoff_ms = j.value("initial_backoff_ms", p.initial_backoff_ms);
        p.timeout_seconds = j.value("timeout_seconds", p.timeout_seconds);
        p.max_concurrency = j.value("max_concurrency", p.max_concurrency);
        p.requests_per_second = j.value("requests_per_second", p.requests_per_second);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model profile: ") + e.what());
    }
    if (p.max_concurrency == 0) throw ConfigError("model profile: max_concurrency must be >= 1");
    return p;
}

inline ModelProfile load_profile(const std::filesystem::path& path) { return profile_from_json(jsonio::parse_file(path)); }

// Caps concurrent requests and spaces them by a token bucket.
class RequestThrottle {
public:
    RequestThrottle(std::size_t max_in_flight, double per_second)
        : slots_(max_in_flight), per_second_(per_second), tokens_(per_second > 0 ? std::max(1.0, per_second) : 0) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return slots_ > 0; });
        --slots_;
        if (per_second_ <= 0) return;
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            auto wait = std::chrono::duration<double>((1.0 - tokens_) / per_second_);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            ++slots_;
        }
        cv_.notify_one();
    }

private:
    void refill() {
        auto now = std::chrono::steady_clock::now();
        std::chrono::duration<double> dt = now - last_;
        last_ = now;
        tokens_ = std::min(std::max(1.0, per_second_), tokens_ + dt.count() * per_second_);
    }

    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t slots_;
    double per_second_;
    double tokens_;
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

class RemoteBackend : public LlmBackend {
public:
    explicit RemoteBackend(ModelProfile profile, std::string api_key = {})
        : profile_(std::move(profile)), throttle_(profile_.max_concurrency, profile_.requests_per_second) {
        if (api_key.empty())
            if (const char* env = std::getenv(profile_.api_key_env.c_str())) api_key = env;
        api_key_ = std::move(api_key);
        split_endpoint();
    }

    std::string complete(const CompletionRequest& request) override {
        request.validate();
        const auto body = build_body(request).dump();
        const auto digest = prompt_digest(request.prompt.body);

        throttle_.acquire();
        struct Release {
            RequestThrottle& t;
            ~Release() { t.release(); }
        } release{throttle_};

        GatewayErrorKind last_kind = GatewayErrorKind::Transport;
        std::string last_message;
        for (int attempt = 0; attempt <= profile_.max_retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    static_cast<long>(profile_.initial_backoff_ms) * (1L << std::min(attempt - 1, 16))));

            httplib::Client client(origin_);
            client.set_connection_timeout(profile_.timeout_seconds);
            client.set_read_timeout(profile_.timeout_seconds);
            client.set_write_timeout(profile_.timeout_seconds);
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto res = client.Post(path_, headers, body, "application/json");

            if (!res) {
                auto err = res.error();
                last_kind = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout ||
                             err == httplib::Error::Write)
                                ? GatewayErrorKind::Timeout
                                : GatewayErrorKind::Transport;
                last_message = httplib::to_string(err);
                continue;
            }
            if (res->status == 401 || res->status == 403)
                throw GatewayError(GatewayErrorKind::Auth, "HTTP " + std::to_string(res->status), digest);
            if (res->status == 429) {
                last_kind = GatewayErrorKind::RateLimited;
                last_message = "HTTP 429 after " + std::to_string(attempt + 1) + " attempt(s)";
                continue;
            }
            if (res->status >= 500) {
                last_kind = GatewayErrorKind::Transport;
                last_message = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw GatewayError(GatewayErrorKind::BadResponse, "HTTP " + std::to_string(res->status), digest);
            return extract_text(res->body, digest);
        }
        throw GatewayError(last_kind, last_message, digest);
    }

    std::string identity() const override {
        return "remote:" + profile_.endpoint + "#" + profile_.model +
               (profile_.dialect == Dialect::Chat ? "#chat" : "#completion");
    }

    const ModelProfile& profile() const { return profile_; }

private:
    void split_endpoint() {
        const auto& url = profile_.endpoint;
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw ConfigError("model profile: endpoint must be an absolute URL");
        auto path_start = url.find('/', scheme_end + 3);
        origin_ = url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    }

    json build_body(const CompletionRequest& request) const {
        json body = profile_.extra_request_fields;
        body["model"] = profile_.model;
        body["max_tokens"] = request.max_output_tokens;
        body["temperature"] = request.temperature;
        if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
        if (profile_.dialect == Dialect::Chat)
            body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt.body}}});
        else
            body["prompt"] = request.prompt.body;
        return body;
    }

    std::string extract_text(const std::string& raw, const std::string& digest) const {
        try {
            auto reply = json::parse(raw);
            return reply.at(json::json_pointer(profile_.effective_pointer())).get<std::string>();
        } catch (const json::exception& e) {
            throw GatewayError(GatewayErrorKind::BadResponse, std::string("cannot read completion: ") + e.what(), digest);
        }
    }

    ModelProfile profile_;
    std::string api_key_;
    std::string origin_;
    std::string path_;
    RequestThrottle throttle_;
};

// "scripted:<rules.jsonl>" or "remote:<profile.json>".
inline std::shared_ptr<LlmBackend> make_backend(std::string_view spec) {
    auto colon = spec.find(':');
    if (colon == std::string_view::npos) throw ConfigError("backend must be scripted:<path> or remote:<path>");
    auto kind = spec.substr(0, colon);
    std::filesystem::path path(std::string(spec.substr(colon + 1)));
    if (!std::filesystem::exists(path)) throw ConfigError("backend file not found: " + path.string());
    if (kind == "scripted") return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(path));
    if (kind == "remote") return std::make_shared<RemoteBackend>(load_profile(path));
    throw ConfigError("unknown backend kind '" + std::string(kind) + "'");
}

}  // namespace chatdiag
