#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "chatdiag/chatdiag.hpp"

namespace testsupport {

inline std::filesystem::path source_dir() { return CHATDIAG_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }
inline std::filesystem::path synthetic_dir() { return data_dir() / "synthetic"; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("chatdiag-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline chatdiag::Timestamp ts(const std::string& s) { return chatdiag::parse_timestamp(s); }

inline chatdiag::Post post(const std::string& id, const std::string& when, const std::string& text) {
    chatdiag::Post p;
    p.post_id = id;
    p.timestamp = ts(when);
    p.text = text;
    return p;
}

// Four posts of mixed tone, used by prompt and dialogue tests.
inline chatdiag::UserTimeline fixed_timeline() {
    chatdiag::UserTimeline t;
    t.user_id = "user-fixed";
    t.label = chatdiag::Label::Depressed;
    t.posts = {post("t1", "2023-03-01T09:00:00Z", "Another sleepless night, I keep staring at the ceiling."),
               post("t2", "2023-03-02T12:30:00Z", "Skipped lunch again, not hungry at all."),
               post("t3", "2023-03-03T18:45:00Z", "Everyone would be better off without me."),
               post("t4", "2023-03-05T08:15:00Z", "Too tired to go to class today.")};
    t.posts[1].images.push_back({std::nullopt, std::string("An empty plate on a kitchen table"), std::nullopt});
    return t;
}

inline std::shared_ptr<chatdiag::ScriptedBackend> scripted(std::vector<chatdiag::ScriptedRule> rules) {
    return std::make_shared<chatdiag::ScriptedBackend>(std::move(rules));
}

inline chatdiag::ScriptedRule contains(std::vector<std::string> needles, std::string response) {
    return {chatdiag::ContainsMatch{std::move(needles)}, std::move(response)};
}

template <class F>
double seconds(F&& f) {
    auto start = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Inputs behind the golden prompt files: the fixed timeline, the first k
// shipped demonstrations and a 0.90 / 0.10 answer candidate.
inline chatdiag::PromptText golden_prompt(const chatdiag::ExperimentSetting& s,
                                          const std::vector<chatdiag::Post>& posts = fixed_timeline().posts) {
    static const auto demos = chatdiag::take_demonstrations(chatdiag::builtin_demonstrations(), 2);
    std::optional<chatdiag::AnswerHeuristic> heuristic;
    if (s.use_heuristic) heuristic = chatdiag::AnswerHeuristic{"user-fixed", 0.90, 0.10};
    return chatdiag::build_diagnosis_prompt(s, chatdiag::DiagnosticCriteria::dsm5_default(),
                                            {demos.begin(), demos.begin() + s.k}, posts, heuristic);
}

inline std::filesystem::path golden_path(const std::string& rung) {
    std::string name;
    for (char c : rung) name += (c == '/' || c == ' ' || c == ',') ? '_' : static_cast<char>(std::tolower(c));
    return source_dir() / "tests" / "golden" / (name + ".txt");
}

}  // namespace testsupport
