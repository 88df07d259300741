#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "chatdiag/core_model.hpp"
#include "chatdiag/ood_perturber.hpp"
#include "chatdiag/pipeline.hpp"
#include "chatdiag/random.hpp"

namespace chatdiag {

enum class Split { IID, OOD };

inline std::string to_string(Split s) { return s == Split::IID ? "iid" : "ood"; }

inline Split parse_split(std::string_view s) {
    if (s == "iid") return Split::IID;
    if (s == "ood") return Split::OOD;
    throw ConfigError("unknown split '" + std::string(s) + "' (expected iid|ood)");
}

// Positive class = Depressed. Unparseable outputs are tallied apart from the
// four cells, split by gold label so they can be scored as errors.
struct Confusion {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;
    long unparseable_depressed = 0;
    long unparseable_non_depressed = 0;

    long unparseable() const { return unparseable_depressed + unparseable_non_depressed; }
    long total() const { return tp + fp + fn + tn + unparseable(); }
    bool operator==(const Confusion&) const = default;
};

struct Metrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double accuracy = 0;
    bool operator==(const Metrics&) const = default;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double precision, double recall) {
    return safe_ratio(2.0 * precision * recall, precision + recall);
}

// Unparseable outputs count as wrong: a depressed user becomes a false
// negative, a non-depressed one a false positive.
inline Metrics compute_metrics(const Confusion& c) {
    const double tp = static_cast<double>(c.tp);
    const double fp = static_cast<double>(c.fp + c.unparseable_non_depressed);
    const double fn = static_cast<double>(c.fn + c.unparseable_depressed);
    const double tn = static_cast<double>(c.tn);
    Metrics m;
    m.precision = safe_ratio(tp, tp + fp);
    m.recall = safe_ratio(tp, tp + fn);
    m.f1 = f1_score(m.precision, m.recall);
    m.accuracy = safe_ratio(tp + tn, static_cast<double>(c.total()));
    return m;
}

struct UserOutcome {
    std::string user_id;
    Label gold = Label::NonDepressed;
    std::optional<Label> predicted;
    bool parse_ok = false;
    std::string error;

    bool operator==(const UserOutcome&) const = default;
};

inline Confusion tally(const std::vector<UserOutcome>& outcomes) {
    Confusion c;
    for (const auto& o : outcomes) {
        const bool gold_pos = o.gold == Label::Depressed;
        if (!o.parse_ok || !o.predicted) {
            (gold_pos ? c.unparseable_depressed : c.unparseable_non_depressed)++;
            continue;
        }
        const bool pred_pos = *o.predicted == Label::Depressed;
        if (gold_pos && pred_pos) ++c.tp;
        else if (!gold_pos && pred_pos) ++c.fp;
        else if (gold_pos) ++c.fn;
        else ++c.tn;
    }
    return c;
}

struct ExperimentReport {
    ExperimentSetting setting;
    Split split = Split::IID;
    Confusion confusion;
    Metrics metrics;
    std::vector<UserOutcome> per_user;
    std::string config_digest;

    bool operator==(const ExperimentReport&) const = default;
};

inline json to_json(const ExperimentReport& r) {
    json users = json::array();
    for (const auto& o : r.per_user) {
        json u = {{"user_id", o.user_id},
                  {"gold", to_string(o.gold)},
                  {"predicted", o.predicted ? json(to_string(*o.predicted)) : json(nullptr)},
                  {"parse_ok", o.parse_ok}};
        if (!o.error.empty()) u["error"] = o.error;
        users.push_back(std::move(u));
    }
    const auto& c = r.confusion;
    return {{"setting", to_json(r.setting)},
            {"split", to_string(r.split)},
            {"confusion",
             {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}, {"unparseable", c.unparseable()},
              {"unparseable_depressed", c.unparseable_depressed},
              {"unparseable_non_depressed", c.unparseable_non_depressed}}},
            {"precision", r.metrics.precision},
            {"recall", r.metrics.recall},
            {"f1", r.metrics.f1},
            {"accuracy", r.metrics.accuracy},
            {"per_user", users},
            {"config_digest", r.config_digest}};
}

// Metrics are recomputed from the confusion counts; stored values must agree
// to the 3 decimals they were written with.
inline ExperimentReport report_from_json(const json& j) {
    ExperimentReport r;
    try {
        r.setting = setting_from_json(j.at("setting"));
        r.split = parse_split(j.at("split").get<std::string>());
        const auto& c = j.at("confusion");
        r.confusion = {c.at("tp").get<long>(), c.at("fp").get<long>(), c.at("fn").get<long>(), c.at("tn").get<long>(),
                       c.at("unparseable_depressed").get<long>(), c.at("unparseable_non_depressed").get<long>()};
        for (const auto& u : j.at("per_user")) {
            UserOutcome o;
            o.user_id = u.at("user_id").get<std::string>();
            o.gold = parse_label(u.at("gold").get<std::string>()).value();
            if (u.at("predicted").is_string()) o.predicted = parse_label(u["predicted"].get<std::string>());
            o.parse_ok = u.at("parse_ok").get<bool>();
            o.error = u.value("error", "");
            r.per_user.push_back(std::move(o));
        }
        r.config_digest = j.at("config_digest").get<std::string>();
    } catch (const std::exception& e) {
        throw ValidationError("report", "", e.what());
    }
    r.metrics = compute_metrics(r.confusion);
    for (auto [key, value] : {std::pair{"precision", r.metrics.precision}, std::pair{"recall", r.metrics.recall},
                              std::pair{"f1", r.metrics.f1}, std::pair{"accuracy", r.metrics.accuracy}})
        if (std::abs(j.at(key).get<double>() - value) > 5e-4)
            throw ValidationError("report", key, "does not match the confusion counts");
    if (tally(r.per_user) != r.confusion) throw ValidationError("report", "confusion", "does not match per_user");
    return r;
}

inline std::string serialize_report(const ExperimentReport& r) { return jsonio::dump_canonical(to_json(r)); }

inline void save_report(const ExperimentReport& r, const std::filesystem::path& path) {
    jsonio::write_file(path, serialize_report(r));
}

inline ExperimentReport load_report(const std::filesystem::path& path) { return report_from_json(jsonio::parse_file(path)); }

// ---------------------------------------------------------------------------
// Cross-validation

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

// Stratified: each class is shuffled with the seed and dealt round-robin, the
// deal continuing across classes so both per-class and total fold sizes
// differ by at most one.
inline std::vector<Fold> kfold_split(const std::vector<UserTimeline>& users, int folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (static_cast<std::size_t>(folds) > users.size())
        throw ConfigError("more folds (" + std::to_string(folds) + ") than users (" + std::to_string(users.size()) + ")");
    std::vector<std::string> pos, neg;
    for (const auto& u : users) {
        if (!u.label) throw ConfigError("user " + u.user_id + " has no label; cross-validation needs labels");
        (*u.label == Label::Depressed ? pos : neg).push_back(u.user_id);
    }
    Rng rng(seed);
    std::vector<std::vector<std::string>> test(static_cast<std::size_t>(folds));
    std::size_t slot = 0;
    for (auto* cls : {&pos, &neg}) {
        auto perm = seeded_permutation(cls->size(), rng);
        for (auto i : perm) test[slot++ % test.size()].push_back((*cls)[i]);
    }
    std::vector<Fold> out;
    for (std::size_t f = 0; f < test.size(); ++f) {
        Fold fold;
        std::set<std::string> in_test(test[f].begin(), test[f].end());
        fold.test_ids = test[f];
        for (const auto& u : users)
            if (!in_test.count(u.user_id)) fold.train_ids.push_back(u.user_id);
        out.push_back(std::move(fold));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentResources : PipelineResources {
    std::optional<PerturbConfig> perturb;  // required for OOD
};

inline std::string corpus_digest(const std::vector<UserTimeline>& corpus) {
    return text::sha256_hex(corpus_to_jsonl(corpus));
}

inline json experiment_config_json(const std::vector<UserTimeline>& corpus, const ExperimentSetting& setting, Split split,
                                   const ExperimentResources& r) {
    json j = pipeline_config_json(setting, r);
    j["split"] = to_string(split);
    j["perturb"] = split == Split::OOD && r.perturb ? to_json(*r.perturb) : json(nullptr);
    j["corpus"] = corpus_digest(corpus);
    return j;
}

inline UserOutcome evaluate_user(const UserTimeline& user, const ExperimentSetting& setting, Split split,
                                 const ExperimentResources& r) {
    UserOutcome o;
    o.user_id = user.user_id;
    o.gold = *user.label;
    const UserTimeline input = split == Split::OOD ? perturb_timeline(user, *r.perturb) : user;
    try {
        auto result = diagnose_timeline(input, setting, r);
        o.predicted = result.diagnosis.label;
        o.parse_ok = true;
    } catch (const UnparseableOutput&) {
        o.error = "unparseable model output";
    } catch (const GatewayError& e) {
        o.error = e.what();
    }
    return o;
}

// Per user: perturb (OOD) -> describe -> select -> prompt -> complete -> parse
// -> tally. Model failures count as incorrect; configuration problems abort
// before the first model call.
inline ExperimentReport run_experiment(const std::vector<UserTimeline>& corpus, const ExperimentSetting& setting,
                                       Split split, const ExperimentResources& r) {
    validate_resources(setting, r, &corpus);
    if (split == Split::OOD && !r.perturb) throw ConfigError("OOD split needs a perturbation config");
    if (split == Split::IID && r.perturb) throw ConfigError("perturbation config given for an IID split");
    if (r.perturb) r.perturb->validate();
    if (corpus.empty()) throw ConfigError("empty corpus");
    for (const auto& u : corpus)
        if (!u.label) throw ConfigError("user " + u.user_id + " has no gold label");

    std::vector<UserOutcome> outcomes(corpus.size());
    const std::size_t width = std::max<std::size_t>(1, r.max_parallel);
    for (std::size_t start = 0; start < corpus.size(); start += width) {
        const std::size_t end = std::min(corpus.size(), start + width);
        if (width == 1) {
            outcomes[start] = evaluate_user(corpus[start], setting, split, r);
            continue;
        }
        std::vector<std::future<UserOutcome>> batch;
        for (std::size_t i = start; i < end; ++i)
            batch.push_back(std::async(std::launch::async, evaluate_user, std::cref(corpus[i]), std::cref(setting), split,
                                       std::cref(r)));
        for (std::size_t i = start; i < end; ++i) outcomes[i] = batch[i - start].get();
    }

    ExperimentReport report;
    report.setting = setting;
    report.split = split;
    report.per_user = std::move(outcomes);
    report.confusion = tally(report.per_user);
    report.metrics = compute_metrics(report.confusion);
    report.config_digest = config_digest(experiment_config_json(corpus, setting, split, r));
    return report;
}

struct AblationRung {
    std::string name;
    ExperimentSetting setting;
};

// Nested removals: full, -A, -A-COT, -A-COT-C, -A-COT-Demo, -A-COT-C-Demo.
// Dropping A turns full-data into few-shot; dropping Demo turns it into zero-shot.
inline std::vector<AblationRung> ablation_ladder(const ExperimentSetting& base) {
    if (base.mode != Mode::FullData || !base.use_heuristic || !base.use_cot || !base.use_criteria || base.k < 1)
        throw ConfigError("ablation base must be full-data with heuristic, CoT, criteria and k >= 1");
    auto few = base;
    few.mode = Mode::FewShot;
    few.use_heuristic = false;
    auto no_cot = few;
    no_cot.use_cot = false;
    auto no_c = no_cot;
    no_c.use_criteria = false;
    auto no_demo = no_cot;
    no_demo.mode = Mode::ZeroShot;
    no_demo.k = 0;
    auto bare = no_demo;
    bare.use_criteria = false;
    return {{"full", base},
            {"w/o A", few},
            {"w/o A,COT", no_cot},
            {"w/o A,COT,C", no_c},
            {"w/o A,COT,Demo", no_demo},
            {"w/o A,COT,C,Demo", bare}};
}

inline std::vector<ExperimentReport> run_ablation_suite(const std::vector<UserTimeline>& corpus,
                                                        const ExperimentSetting& base, Split split,
                                                        const ExperimentResources& r) {
    auto ladder = ablation_ladder(base);
    for (const auto& rung : ladder) validate_resources(rung.setting, r, &corpus);
    std::vector<ExperimentReport> out;
    for (const auto& rung : ladder) out.push_back(run_experiment(corpus, rung.setting, split, r));
    return out;
}

enum class SweepAxis { Selector, NumPosts, NumDemos };

inline std::string to_string(SweepAxis a) {
    switch (a) {
    case SweepAxis::Selector: return "selector";
    case SweepAxis::NumPosts: return "n";
    case SweepAxis::NumDemos: return "k";
    }
    return "?";
}

inline SweepAxis parse_sweep_axis(std::string_view s) {
    if (s == "selector") return SweepAxis::Selector;
    if (s == "n" || s == "posts") return SweepAxis::NumPosts;
    if (s == "k" || s == "demos") return SweepAxis::NumDemos;
    throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected selector|n|k)");
}

struct SweepReport {
    SweepAxis axis = SweepAxis::Selector;
    std::vector<std::string> values;
    std::vector<ExperimentReport> reports;

    // "<axis>,f1" header plus one row per value.
    std::string to_csv() const {
        std::string out = to_string(axis) + ",f1\n";
        for (std::size_t i = 0; i < values.size(); ++i) out += values[i] + "," + text::fixed(reports[i].metrics.f1, 3) + "\n";
        return out;
    }
};

inline ExperimentSetting apply_sweep_value(ExperimentSetting s, SweepAxis axis, const std::string& value) {
    auto as_int = [&](const char* what) {
        try {
            std::size_t used = 0;
            int v = std::stoi(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(std::string("sweep value for ") + what + " must be an integer: " + value);
        }
    };
    switch (axis) {
    case SweepAxis::Selector: s.selector = parse_selector(value); break;
    case SweepAxis::NumPosts: s.n = as_int("n"); break;
    case SweepAxis::NumDemos:
        s.k = as_int("k");
        if (s.k == 0) {
            s.mode = Mode::ZeroShot;
            s.use_heuristic = false;
        } else if (s.mode == Mode::ZeroShot) {
            s.mode = Mode::FewShot;
        }
        break;
    }
    return s;
}

// One report per value along `axis`; every other knob stays at `base`.
inline SweepReport run_sweep(const std::vector<UserTimeline>& corpus, const ExperimentSetting& base, Split split,
                             SweepAxis axis, const std::vector<std::string>& values, const ExperimentResources& r) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    SweepReport sweep{axis, values, {}};
    std::vector<ExperimentSetting> settings;
    for (const auto& v : values) {
        settings.push_back(apply_sweep_value(base, axis, v));
        validate_resources(settings.back(), r, &corpus);
    }
    for (const auto& s : settings) sweep.reports.push_back(run_experiment(corpus, s, split, r));
    return sweep;
}

struct CrossValidationReport {
    std::vector<ExperimentReport> folds;
    Confusion pooled;
    Metrics metrics;
};

// Evaluates each test fold in turn. The train side is reported for callers
// that train an external detector per fold; the pipeline itself is not fit.
inline CrossValidationReport run_cross_validation(const std::vector<UserTimeline>& corpus, const ExperimentSetting& setting,
                                                  Split split, const ExperimentResources& r, int folds, std::uint64_t seed) {
    CrossValidationReport cv;
    std::map<std::string, const UserTimeline*> by_id;
    for (const auto& u : corpus) by_id[u.user_id] = &u;
    for (const auto& fold : kfold_split(corpus, folds, seed)) {
        std::vector<UserTimeline> test;
        for (const auto& id : fold.test_ids) test.push_back(*by_id.at(id));
        cv.folds.push_back(run_experiment(test, setting, split, r));
        const auto& c = cv.folds.back().confusion;
        cv.pooled.tp += c.tp;
        cv.pooled.fp += c.fp;
        cv.pooled.fn += c.fn;
        cv.pooled.tn += c.tn;
        cv.pooled.unparseable_depressed += c.unparseable_depressed;
        cv.pooled.unparseable_non_depressed += c.unparseable_non_depressed;
    }
    cv.metrics = compute_metrics(cv.pooled);
    return cv;
}

}  // namespace chatdiag
