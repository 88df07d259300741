#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "chatdiag/answer_heuristic.hpp"
#include "chatdiag/core_model.hpp"
#include "chatdiag/llm_gateway.hpp"
#include "chatdiag/random.hpp"

// Desk-scale stand-in for real depression corpora: labeled timelines whose
// posts carry a per-user marker, plus scripted model rules keyed on it.
namespace chatdiag::synthetic {

inline constexpr std::array<const char*, 12> kDepressedPosts = {
    "Can't sleep again, it is 4am and my mind will not stop",
    "Everything feels pointless lately, I don't enjoy anything anymore",
    "So tired all the time, even getting out of bed is exhausting",
    "I feel like a burden to everyone around me",
    "Skipped meals again, no appetite for days",
    "Can't focus at work, I keep rereading the same line",
    "Another day of feeling empty and hopeless",
    "Cancelled plans with friends again, I just want to be alone",
    "Nothing I do matters, I keep failing at everything",
    "Had lunch with my sister today, it was okay I guess",
    "Crying in the car before going inside, again",
    "Why does every small task feel so heavy",
};

inline constexpr std::array<const char*, 12> kControlPosts = {
    "Great run this morning, new personal best",
    "Trying a new pasta recipe tonight",
    "Excited for the concert on Friday with friends",
    "Work was busy but productive today",
    "Finished a good book, recommendations welcome",
    "Rainy day, perfect for coffee and a movie",
    "Annoyed that my train was late again",
    "Spent the afternoon gardening with the kids",
    "Planning a weekend trip to the coast",
    "Got some good news at work, feeling proud",
    "Board game night went way too late, worth it",
    "Fixed the bike chain myself, small win",
};

inline constexpr std::array<const char*, 4> kDepressedCaptions = {
    "An unmade bed in a dark room with the curtains drawn",
    "A half-eaten plate of food left on a desk",
    "A rainy window at night",
    "A screenshot of a phone clock showing 4:12 AM",
};

inline constexpr std::array<const char*, 4> kControlCaptions = {
    "A cup of coffee on a wooden table",
    "A group of friends smiling at a concert",
    "A bicycle leaning against a garden fence",
    "A plate of pasta with fresh basil",
};

inline constexpr std::array<const char*, 3> kDepressedExplanations = {
    "The posts describe persistent exhaustion, which meets criterion 6. They also report losing interest in things "
    "they used to enjoy, which meets criterion 2. The user is likely depressed.",
    "Several posts express feeling empty and hopeless, which meets the first criterion of the DSM. Sleepless nights "
    "point to criterion 4, and feeling like a burden points to criterion 7. The user is likely depressed.",
    "Poor appetite across several days matches criterion 3. Trouble focusing at work matches criterion 8. The mood "
    "described is persistently low. The user is likely depressed.",
};

inline constexpr const char* kControlExplanation =
    "The posts describe ordinary daily activities, social plans and small achievements. Minor annoyances appear but "
    "no symptom persists. The user is unlikely to be depressed.";

struct Options {
    int per_class = 20;
    std::uint64_t seed = 7;
};

inline std::string user_id(Label label, int index, int per_class) {
    const int width = per_class >= 100 ? static_cast<int>(std::to_string(per_class).size()) : 2;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*d", width, index);
    return std::string(label == Label::Depressed ? "u-positive-" : "u-negative-") + buf;
}

// Every post ends with "(<user_id>)" so scripted rules can recognise the user
// from any selection of posts.
inline std::string marker(const std::string& uid) { return "(" + uid + ")"; }

inline std::string image_uri(const std::string& uid, int post) {
    return "synthetic://" + uid + "/p" + std::to_string(post) + ".jpg";
}

inline UserTimeline make_user(Label label, int index, const Options& opt, Rng& rng, std::map<std::string, std::string>* uri_captions) {
    const bool pos = label == Label::Depressed;
    UserTimeline t;
    t.user_id = user_id(label, index, opt.per_class);
    t.label = label;
    const int count = 6 + static_cast<int>(rng.below(5));
    auto clock = parse_timestamp("2023-01-01T08:00:00Z") + std::chrono::hours(24 * (index + (pos ? 0 : 3)));
    for (int j = 1; j <= count; ++j) {
        clock += std::chrono::minutes(90 + static_cast<int>(rng.below(60 * 30)));
        Post p;
        char id[8];
        std::snprintf(id, sizeof id, "p%02d", j);
        p.post_id = id;
        p.timestamp = clock;
        const auto& pool = pos ? kDepressedPosts : kControlPosts;
        p.text = std::string(pool[rng.below(pool.size())]) + " " + marker(t.user_id);
        const auto& captions = pos ? kDepressedCaptions : kControlCaptions;
        const auto roll = rng.below(10);
        if (roll == 0) {
            p.images.push_back({std::nullopt, std::string(captions[rng.below(captions.size())]), std::nullopt});
        } else if (roll == 1) {
            ImageRef img;
            img.uri = image_uri(t.user_id, j);
            if (uri_captions) (*uri_captions)[*img.uri] = captions[rng.below(captions.size())];
            p.images.push_back(std::move(img));
        }
        t.posts.push_back(std::move(p));
    }
    return t;
}

struct Bundle {
    std::vector<UserTimeline> corpus;
    std::vector<ScriptedRule> rules;
    HeuristicTable heuristics;
    std::map<std::string, std::string> image_captions;  // uri -> caption
};

inline std::vector<ScriptedRule> dialogue_rules() {
    const std::string chat = "Instruction: Chat based";
    return {
        {ContainsMatch{{chat, "Input: None"}},
         "Hi, I read through some of your recent posts and wanted to check in. You mentioned feeling tired a lot "
         "lately. How have you been sleeping?"},
        {ContainsMatch{{chat, "Input: I can't sleep"}},
         "That sounds exhausting. Poor sleep can make everything feel heavier. Have you noticed what keeps you "
         "awake, and is there anyone you could talk to about it?"},
        {ContainsMatch{{chat, "Input: I'm fine"}},
         "I'm glad to hear that. It is still okay to take a moment for yourself. What has been going well for you "
         "recently?"},
        {ContainsMatch{{chat}},
         "Thank you for sharing that with me. Could you tell me a little more about how this has been affecting "
         "your days? If things feel overwhelming, talking with a mental health professional can really help."},
    };
}

// Rules: one diagnosis rule per user (correct answer), negativity rules per
// class, then the dialogue rules.
inline std::vector<ScriptedRule> rules_for(const std::vector<UserTimeline>& corpus) {
    std::vector<ScriptedRule> rules;
    std::size_t positives = 0;
    for (const auto& u : corpus) {
        const bool pos = u.label && *u.label == Label::Depressed;
        std::string response = std::string("Answer: ") + (pos ? "A" : "B") + "\nExplanation: " +
                               (pos ? kDepressedExplanations[positives++ % kDepressedExplanations.size()]
                                    : kControlExplanation);
        rules.push_back({ContainsMatch{{"Question: Analyze", marker(u.user_id)}}, std::move(response)});
    }
    rules.push_back({ContainsMatch{{"Rate the negativity", "(u-positive-"}}, "NEGATIVITY: 0.80"});
    rules.push_back({ContainsMatch{{"Rate the negativity", "(u-negative-"}}, "NEGATIVITY: 0.20"});
    for (auto& r : dialogue_rules()) rules.push_back(std::move(r));
    return rules;
}

inline Bundle generate(const Options& opt = {}) {
    if (opt.per_class < 1) throw ConfigError("synthetic: per_class must be >= 1");
    Bundle b;
    Rng rng(opt.seed);
    for (Label label : {Label::Depressed, Label::NonDepressed})
        for (int i = 1; i <= opt.per_class; ++i) {
            b.corpus.push_back(make_user(label, i, opt, rng, &b.image_captions));
            const bool pos = label == Label::Depressed;
            const int cents = pos ? 60 + static_cast<int>(rng.below(36)) : 5 + static_cast<int>(rng.below(36));
            AnswerHeuristic h{b.corpus.back().user_id, cents / 100.0, (100 - cents) / 100.0};
            b.heuristics.emplace(h.user_id, h);
        }
    b.rules = rules_for(b.corpus);
    return b;
}

inline std::string rules_to_jsonl(const std::vector<ScriptedRule>& rules) {
    std::string out;
    for (const auto& r : rules) out += jsonio::dump_canonical(to_json(r), -1) + "\n";
    return out;
}

inline std::string heuristics_to_jsonl(const HeuristicTable& table) {
    std::string out;
    for (const auto& [id, h] : table) out += jsonio::dump_canonical(to_json(h), -1) + "\n";
    return out;
}

inline json manifest(const Bundle& b, const Options& opt) {
    std::size_t posts = 0, images = 0, positives = 0;
    for (const auto& u : b.corpus) {
        posts += u.posts.size();
        for (const auto& p : u.posts) images += p.images.size();
        if (u.label == Label::Depressed) ++positives;
    }
    return {{"seed", opt.seed},
            {"per_class", opt.per_class},
            {"users", b.corpus.size()},
            {"depressed", positives},
            {"non_depressed", b.corpus.size() - positives},
            {"posts", posts},
            {"images", images},
            {"rules", b.rules.size()},
            {"files", {"corpus.jsonl", "rules.jsonl", "heuristics.jsonl", "image_captions.json"}}};
}

// corpus.jsonl, rules.jsonl, heuristics.jsonl, image_captions.json, manifest.json
inline void write_bundle(const std::filesystem::path& dir, const Options& opt = {}) {
    const auto b = generate(opt);
    std::filesystem::create_directories(dir);
    save_corpus(b.corpus, dir / "corpus.jsonl");
    jsonio::write_file(dir / "rules.jsonl", rules_to_jsonl(b.rules));
    jsonio::write_file(dir / "heuristics.jsonl", heuristics_to_jsonl(b.heuristics));
    jsonio::write_file(dir / "image_captions.json", jsonio::dump_canonical(json(b.image_captions)));
    jsonio::write_file(dir / "manifest.json", jsonio::dump_canonical(manifest(b, opt)));
}

inline std::map<std::string, std::string> load_image_captions(const std::filesystem::path& path) {
    auto j = jsonio::parse_file(path);
    if (!j.is_object()) throw ConfigError(path.string() + ": expected an object of uri -> caption");
    return j.get<std::map<std::string, std::string>>();
}

}  // namespace chatdiag::synthetic
