#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "chatdiag/errors.hpp"
#include "chatdiag/json_io.hpp"

namespace chatdiag {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

// Depressed is option "A" and the positive class everywhere.
enum class Label { Depressed, NonDepressed };

inline std::string to_string(Label l) {
    return l == Label::Depressed ? "depressed" : "non-depressed";
}

inline char option_letter(Label l) { return l == Label::Depressed ? 'A' : 'B'; }

inline std::optional<Label> parse_label(std::string_view s) {
    if (s == "depressed") return Label::Depressed;
    if (s == "non-depressed") return Label::NonDepressed;
    return std::nullopt;
}

// RFC 3339: YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM|-HH:MM]; normalised to UTC.
inline Timestamp parse_timestamp(std::string_view s) {
    using namespace std::chrono;
    auto digits = [&](std::size_t pos, std::size_t len) -> int {
        if (pos + len > s.size()) throw ParseError("timestamp too short: " + std::string(s));
        int v = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (s[i] < '0' || s[i] > '9') throw ParseError("bad timestamp: " + std::string(s));
            v = v * 10 + (s[i] - '0');
        }
        return v;
    };
    auto expect = [&](std::size_t pos, std::string_view chars) {
        if (pos >= s.size() || chars.find(s[pos]) == std::string_view::npos)
            throw ParseError("bad timestamp: " + std::string(s));
    };
    int Y = digits(0, 4);
    expect(4, "-");
    int M = digits(5, 2);
    expect(7, "-");
    int D = digits(8, 2);
    expect(10, "Tt ");
    int h = digits(11, 2);
    expect(13, ":");
    int m = digits(14, 2);
    expect(16, ":");
    int sec = digits(17, 2);
    std::size_t pos = 19;
    long ms = 0;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::size_t start = pos;
        long scale = 100;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            ms += (s[pos] - '0') * scale;
            scale /= 10;
            ++pos;
        }
        if (pos == start) throw ParseError("bad timestamp fraction: " + std::string(s));
    }
    minutes offset{0};
    if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
        ++pos;
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
        int sign = s[pos] == '+' ? 1 : -1;
        int oh = digits(pos + 1, 2);
        expect(pos + 3, ":");
        int om = digits(pos + 4, 2);
        offset = minutes{sign * (oh * 60 + om)};
        pos += 6;
    } else {
        throw ParseError("timestamp lacks UTC designator: " + std::string(s));
    }
    if (pos != s.size()) throw ParseError("trailing characters in timestamp: " + std::string(s));
    year_month_day ymd{year{Y}, month{static_cast<unsigned>(M)}, day{static_cast<unsigned>(D)}};
    if (!ymd.ok() || h > 23 || m > 59 || sec > 60)
        throw ParseError("timestamp out of range: " + std::string(s));
    auto tp = sys_days{ymd} + hours{h} + minutes{m} + seconds{sec} + milliseconds{ms} - offset;
    return time_point_cast<milliseconds>(tp);
}

inline std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    auto day_point = floor<days>(t);
    year_month_day ymd{day_point};
    hh_mm_ss<milliseconds> tod{t - day_point};
    char buf[40];
    int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                          static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                          static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                          static_cast<long>(tod.seconds().count()));
    std::string out(buf, static_cast<std::size_t>(n));
    if (auto ms = tod.subseconds().count(); ms != 0) {
        std::snprintf(buf, sizeof buf, ".%03ld", static_cast<long>(ms));
        out += buf;
    }
    return out + "Z";
}

struct ImageRef {
    std::optional<std::string> uri;
    std::optional<std::string> caption;
    std::optional<std::string> ocr_text;

    bool operator==(const ImageRef&) const = default;
};

struct Post {
    std::string post_id;
    Timestamp timestamp{};
    std::string text;
    std::vector<ImageRef> images;

    bool operator==(const Post&) const = default;
};

struct UserTimeline {
    std::string user_id;
    std::vector<Post> posts;
    std::optional<Label> label;

    bool operator==(const UserTimeline&) const = default;
};

struct EvidenceItem {
    std::optional<std::string> post_id;
    std::optional<int> criterion_index;
    std::string snippet;

    bool operator==(const EvidenceItem&) const = default;
};

enum class Mode { ZeroShot, FewShot, FullData };
enum class SelectorStrategy { Random, Recent, Sentiment };

inline std::string to_string(Mode m) {
    switch (m) {
    case Mode::ZeroShot: return "zero";
    case Mode::FewShot: return "few";
    case Mode::FullData: return "full";
    }
    return "?";
}

inline Mode parse_mode(std::string_view s) {
    if (s == "zero" || s == "zero-shot") return Mode::ZeroShot;
    if (s == "few" || s == "few-shot") return Mode::FewShot;
    if (s == "full" || s == "full-data") return Mode::FullData;
    throw ConfigError("unknown mode '" + std::string(s) + "' (expected zero|few|full)");
}

inline std::string to_string(SelectorStrategy s) {
    switch (s) {
    case SelectorStrategy::Random: return "random";
    case SelectorStrategy::Recent: return "recent";
    case SelectorStrategy::Sentiment: return "sentiment";
    }
    return "?";
}

inline SelectorStrategy parse_selector(std::string_view s) {
    if (s == "random") return SelectorStrategy::Random;
    if (s == "recent") return SelectorStrategy::Recent;
    if (s == "sentiment") return SelectorStrategy::Sentiment;
    throw ConfigError("unknown selector '" + std::string(s) + "' (expected random|recent|sentiment)");
}

struct ExperimentSetting {
    Mode mode = Mode::FewShot;
    int k = 2;
    int n = 4;
    SelectorStrategy selector = SelectorStrategy::Recent;
    bool use_cot = true;
    bool use_criteria = true;
    bool use_heuristic = false;

    bool operator==(const ExperimentSetting&) const = default;

    void validate() const {
        if (n < 1) throw ConfigError("setting: n must be >= 1");
        if (k < 0) throw ConfigError("setting: k must be >= 0");
        if (mode == Mode::ZeroShot && k != 0) throw ConfigError("setting: zero-shot requires k = 0");
        if (use_heuristic && mode != Mode::FullData)
            throw ConfigError("setting: answer heuristic requires full-data mode");
    }

    static ExperimentSetting zero_shot(int n = 4) {
        return {Mode::ZeroShot, 0, n, SelectorStrategy::Recent, true, true, false};
    }
    static ExperimentSetting few_shot(int k = 2, int n = 4) {
        return {Mode::FewShot, k, n, SelectorStrategy::Recent, true, true, false};
    }
    static ExperimentSetting full_data(int k = 2, int n = 4) {
        return {Mode::FullData, k, n, SelectorStrategy::Recent, true, true, true};
    }
};

struct Diagnosis {
    Label label = Label::NonDepressed;
    std::string explanation;
    std::vector<EvidenceItem> evidence;
    std::string raw_model_output;
    ExperimentSetting setting;

    bool operator==(const Diagnosis&) const = default;
};

enum class Speaker { System, User };

inline const char* to_string(Speaker s) { return s == Speaker::System ? "System" : "User"; }

struct DialogueTurn {
    Speaker speaker = Speaker::System;
    std::string text;
    int index = 0;

    bool operator==(const DialogueTurn&) const = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline json to_json(const ImageRef& img) {
    json j = json::object();
    if (img.uri) j["uri"] = *img.uri;
    if (img.caption) j["caption"] = *img.caption;
    if (img.ocr_text) j["ocr_text"] = *img.ocr_text;
    return j;
}

inline json to_json(const Post& p) {
    json images = json::array();
    for (const auto& img : p.images) images.push_back(to_json(img));
    return {{"post_id", p.post_id},
            {"timestamp", format_timestamp(p.timestamp)},
            {"text", p.text},
            {"images", images}};
}

inline json to_json(const UserTimeline& t) {
    json posts = json::array();
    for (const auto& p : t.posts) posts.push_back(to_json(p));
    return {{"user_id", t.user_id},
            {"label", t.label ? json(to_string(*t.label)) : json(nullptr)},
            {"posts", posts}};
}

inline json to_json(const EvidenceItem& e) {
    return {{"post_id", e.post_id ? json(*e.post_id) : json(nullptr)},
            {"criterion_index", e.criterion_index ? json(*e.criterion_index) : json(nullptr)},
            {"snippet", e.snippet}};
}

inline json to_json(const ExperimentSetting& s) {
    return {{"mode", to_string(s.mode)},       {"k", s.k},
            {"n", s.n},                        {"selector", to_string(s.selector)},
            {"use_cot", s.use_cot},            {"use_criteria", s.use_criteria},
            {"use_heuristic", s.use_heuristic}};
}

inline ExperimentSetting setting_from_json(const json& j, ExperimentSetting base = {}) {
    try {
        if (j.contains("mode")) base.mode = parse_mode(j.at("mode").get<std::string>());
        if (j.contains("k")) base.k = j.at("k").get<int>();
        if (j.contains("n")) base.n = j.at("n").get<int>();
        if (j.contains("selector")) base.selector = parse_selector(j.at("selector").get<std::string>());
        if (j.contains("use_cot")) base.use_cot = j.at("use_cot").get<bool>();
        if (j.contains("use_criteria")) base.use_criteria = j.at("use_criteria").get<bool>();
        if (j.contains("use_heuristic")) base.use_heuristic = j.at("use_heuristic").get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("setting: ") + e.what());
    }
    return base;
}

inline json to_json(const Diagnosis& d) {
    json evidence = json::array();
    for (const auto& e : d.evidence) evidence.push_back(to_json(e));
    return {{"label", to_string(d.label)},
            {"answer", std::string(1, option_letter(d.label))},
            {"explanation", d.explanation},
            {"evidence", evidence},
            {"raw_model_output", d.raw_model_output},
            {"setting", to_json(d.setting)}};
}

inline Diagnosis diagnosis_from_json(const json& j) {
    Diagnosis d;
    auto label = parse_label(jsonio::require<std::string>(j, "label", "diagnosis"));
    if (!label) throw ValidationError("diagnosis", "label", "must be depressed|non-depressed");
    d.label = *label;
    d.explanation = j.value("explanation", "");
    d.raw_model_output = j.value("raw_model_output", "");
    if (j.contains("setting")) d.setting = setting_from_json(j["setting"]);
    for (const auto& e : j.value("evidence", json::array())) {
        EvidenceItem item;
        if (e.contains("post_id") && e["post_id"].is_string()) item.post_id = e["post_id"].get<std::string>();
        if (e.contains("criterion_index") && e["criterion_index"].is_number_integer())
            item.criterion_index = e["criterion_index"].get<int>();
        item.snippet = e.value("snippet", "");
        d.evidence.push_back(std::move(item));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const UserTimeline& t, std::size_t line = 0) {
    const std::string subject = t.user_id.empty() ? "<unnamed user>" : "user " + t.user_id;
    if (t.user_id.empty()) throw ValidationError(subject, "user_id", "must be non-empty", line);
    if (t.posts.empty()) throw ValidationError(subject, "posts", "m >= 1 required (no posts)", line);
    std::set<std::string> ids;
    for (const auto& p : t.posts) {
        if (p.post_id.empty()) throw ValidationError(subject, "post_id", "must be non-empty", line);
        if (!ids.insert(p.post_id).second)
            throw ValidationError(subject, "post_id", "duplicate id '" + p.post_id + "'", line);
        if (p.text.empty() && p.images.empty())
            throw ValidationError(subject, "posts[" + p.post_id + "]", "needs text or images", line);
        for (const auto& img : p.images)
            if (!img.uri && !img.caption && !img.ocr_text)
                throw ValidationError(subject, "posts[" + p.post_id + "].images",
                                      "image needs uri, caption or ocr_text", line);
    }
}

namespace detail {

inline std::optional<std::string> opt_string(const json& j, const char* key, const std::string& subject,
                                             std::size_t line) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ValidationError(subject, key, "must be a string", line);
    return it->get<std::string>();
}

}  // namespace detail

inline UserTimeline timeline_from_json(const json& j, std::size_t line = 0) {
    if (!j.is_object()) throw ValidationError("", "record", "must be a JSON object", line);
    UserTimeline t;
    auto uid = j.find("user_id");
    if (uid == j.end() || !uid->is_string())
        throw ValidationError("<unnamed user>", "user_id", "missing or not a string", line);
    t.user_id = uid->get<std::string>();
    const std::string subject = "user " + t.user_id;

    if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw ValidationError(subject, "label", "must be a string or null", line);
        t.label = parse_label(it->get<std::string>());
        if (!t.label) throw ValidationError(subject, "label", "must be depressed|non-depressed|null", line);
    }

    auto posts = j.find("posts");
    if (posts == j.end() || !posts->is_array())
        throw ValidationError(subject, "posts", "missing or not an array", line);
    for (const auto& pj : *posts) {
        if (!pj.is_object()) throw ValidationError(subject, "posts", "entries must be objects", line);
        Post p;
        auto pid = pj.find("post_id");
        if (pid == pj.end() || !pid->is_string())
            throw ValidationError(subject, "post_id", "missing or not a string", line);
        p.post_id = pid->get<std::string>();
        auto ts = pj.find("timestamp");
        if (ts == pj.end() || !ts->is_string())
            throw ValidationError(subject, "posts[" + p.post_id + "].timestamp", "missing", line);
        try {
            p.timestamp = parse_timestamp(ts->get<std::string>());
        } catch (const ParseError& e) {
            throw ValidationError(subject, "posts[" + p.post_id + "].timestamp", e.what(), line);
        }
        p.text = detail::opt_string(pj, "text", subject, line).value_or("");
        if (auto imgs = pj.find("images"); imgs != pj.end() && !imgs->is_null()) {
            if (!imgs->is_array()) throw ValidationError(subject, "images", "must be an array", line);
            for (const auto& ij : *imgs) {
                if (!ij.is_object()) throw ValidationError(subject, "images", "entries must be objects", line);
                p.images.push_back({detail::opt_string(ij, "uri", subject, line),
                                    detail::opt_string(ij, "caption", subject, line),
                                    detail::opt_string(ij, "ocr_text", subject, line)});
            }
        }
        t.posts.push_back(std::move(p));
    }
    validate(t, line);
    return t;
}

// One JSON object per line; file order is preserved.
inline std::vector<UserTimeline> load_corpus(const std::filesystem::path& path) {
    std::vector<UserTimeline> out;
    jsonio::for_each_jsonl(path, [&](const json& j, std::size_t line) {
        out.push_back(timeline_from_json(j, line));
    });
    return out;
}

inline std::string corpus_to_jsonl(const std::vector<UserTimeline>& corpus) {
    std::string out;
    for (const auto& t : corpus) out += jsonio::dump_canonical(to_json(t), -1) + "\n";
    return out;
}

inline void save_corpus(const std::vector<UserTimeline>& corpus, const std::filesystem::path& path) {
    jsonio::write_file(path, corpus_to_jsonl(corpus));
}

}  // namespace chatdiag
