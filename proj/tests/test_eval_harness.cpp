#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "support.hpp"

using namespace chatdiag;
using testsupport::TempDir;

namespace {

ExperimentResources resources_for(const synthetic::Bundle& b, std::vector<ScriptedRule> before = {}) {
    ExperimentResources r;
    for (auto& rule : b.rules) before.push_back(rule);
    r.backend = testsupport::scripted(std::move(before));
    r.heuristics = b.heuristics;
    r.scorer = std::make_shared<LexiconScorer>(LexiconScorer::default_lexicon());
    return r;
}

Confusion confusion(long tp, long fp, long fn, long tn) {
    Confusion c;
    c.tp = tp;
    c.fp = fp;
    c.fn = fn;
    c.tn = tn;
    return c;
}

std::vector<UserTimeline> labelled(int pos, int neg) {
    std::vector<UserTimeline> out;
    for (int i = 0; i < pos + neg; ++i) {
        UserTimeline t;
        t.user_id = "u" + std::to_string(i);
        t.label = i < pos ? Label::Depressed : Label::NonDepressed;
        t.posts = {testsupport::post("p", "2023-01-01T00:00:00Z", "x")};
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

TEST(Metrics, ZeroConvention) {
    auto m = compute_metrics(confusion(0, 0, 0, 10));
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(compute_metrics(Confusion{}), Metrics{});
}

TEST(Metrics, HarmonicMeanMatchesReferenceRows) {
    EXPECT_NEAR(f1_score(0.979, 0.915), 0.946, 0.001);
    for (const auto& row : oracle::reference_rows()) {
        EXPECT_NEAR(f1_score(row.precision, row.recall), row.f1, 0.002) << row.name;
        EXPECT_NEAR(f1_score(row.precision, row.recall), oracle::f1(row.precision, row.recall), 1e-12) << row.name;
    }
}

TEST(Metrics, RandomConfusionsAgreeWithPerUserTally) {
    std::mt19937_64 gen(100);
    std::vector<std::vector<UserOutcome>> cases;
    {
        std::vector<UserOutcome> fixed;  // tp=37 fp=13 fn=8 tn=42
        auto add = [&](int n, Label gold, Label pred) {
            for (int i = 0; i < n; ++i) fixed.push_back({"u" + std::to_string(fixed.size()), gold, pred, true, ""});
        };
        add(37, Label::Depressed, Label::Depressed);
        add(13, Label::NonDepressed, Label::Depressed);
        add(8, Label::Depressed, Label::NonDepressed);
        add(42, Label::NonDepressed, Label::NonDepressed);
        cases.push_back(fixed);
    }
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<UserOutcome> users;
        const int n = 1 + static_cast<int>(gen() % 80);
        for (int i = 0; i < n; ++i) {
            UserOutcome o{"u" + std::to_string(i), gen() % 2 ? Label::Depressed : Label::NonDepressed, std::nullopt,
                          gen() % 10 != 0, ""};
            if (o.parse_ok) o.predicted = gen() % 2 ? Label::Depressed : Label::NonDepressed;
            users.push_back(o);
        }
        cases.push_back(users);
    }
    for (const auto& users : cases) {
        auto c = tally(users);
        auto cells = oracle::tally(users);
        EXPECT_EQ(c.total(), static_cast<long>(users.size()));
        auto m = compute_metrics(c);
        const double p = cells.tp + cells.fp ? double(cells.tp) / double(cells.tp + cells.fp) : 0;
        const double r = cells.tp + cells.fn ? double(cells.tp) / double(cells.tp + cells.fn) : 0;
        EXPECT_DOUBLE_EQ(m.precision, p);
        EXPECT_DOUBLE_EQ(m.recall, r);
        EXPECT_NEAR(m.f1, oracle::f1(p, r), 1e-12);
        EXPECT_DOUBLE_EQ(m.accuracy, double(cells.tp + cells.tn) / double(users.size()));
    }
    auto fixed = compute_metrics(tally(cases[0]));
    EXPECT_NEAR(fixed.precision, 0.74, 1e-12);
    EXPECT_NEAR(fixed.recall, 37.0 / 45.0, 1e-12);
    EXPECT_NEAR(fixed.accuracy, 0.79, 1e-12);
}

TEST(KFold, FiveFoldsOfTenUsers) {
    auto users = labelled(5, 5);
    auto folds = kfold_split(users, 5, 1);
    ASSERT_EQ(folds.size(), 5u);
    for (const auto& f : folds) {
        ASSERT_EQ(f.test_ids.size(), 2u);
        int pos = 0;
        for (const auto& id : f.test_ids) pos += std::stoi(id.substr(1)) < 5;
        EXPECT_EQ(pos, 1);
        EXPECT_EQ(f.train_ids.size(), 8u);
    }
}

TEST(KFold, PartitionStratifiedAndDeterministic) {
    std::mt19937_64 gen(9);
    for (int trial = 0; trial < 200; ++trial) {
        const int pos = static_cast<int>(gen() % 30), neg = static_cast<int>(gen() % 30);
        auto users = labelled(pos, neg);
        if (users.size() < 2) continue;
        const int k = 2 + static_cast<int>(gen() % std::min<std::size_t>(9, users.size() - 1));
        const auto seed = gen();
        auto folds = kfold_split(users, k, seed);
        ASSERT_EQ(folds.size(), static_cast<std::size_t>(k));
        std::set<std::string> seen;
        std::vector<int> pos_counts, sizes;
        for (const auto& f : folds) {
            int p = 0;
            for (const auto& id : f.test_ids) {
                ASSERT_TRUE(seen.insert(id).second) << "overlap " << id;
                p += std::stoi(id.substr(1)) < pos;
            }
            std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
            for (const auto& id : f.test_ids) ASSERT_FALSE(train.count(id));
            ASSERT_EQ(f.train_ids.size() + f.test_ids.size(), users.size());
            pos_counts.push_back(p);
            sizes.push_back(static_cast<int>(f.test_ids.size()));
        }
        ASSERT_EQ(seen.size(), users.size());
        std::vector<int> neg_counts;
        for (std::size_t i = 0; i < folds.size(); ++i) neg_counts.push_back(sizes[i] - pos_counts[i]);
        for (const auto* v : {&pos_counts, &neg_counts, &sizes}) {
            auto [lo, hi] = std::minmax_element(v->begin(), v->end());
            ASSERT_LE(*hi - *lo, 1);
        }
        auto again = kfold_split(users, k, seed);
        for (std::size_t i = 0; i < folds.size(); ++i) ASSERT_EQ(folds[i].test_ids, again[i].test_ids);
    }
}

TEST(KFold, Errors) {
    auto users = labelled(2, 2);
    EXPECT_THROW(kfold_split(users, 1, 0), ConfigError);
    EXPECT_THROW(kfold_split(users, 5, 0), ConfigError);
    users[0].label.reset();
    EXPECT_THROW(kfold_split(users, 2, 0), ConfigError);
}

TEST(RunExperiment, PerfectScriptGivesF1One) {
    auto b = synthetic::generate({10, 7});
    auto r = resources_for(b);
    for (auto setting : {ExperimentSetting::zero_shot(), ExperimentSetting::few_shot(), ExperimentSetting::full_data()}) {
        auto report = run_experiment(b.corpus, setting, Split::IID, r);
        EXPECT_EQ(report.confusion, confusion(10, 0, 0, 10));
        EXPECT_EQ(report.metrics.f1, 1.0);
        EXPECT_EQ(report.metrics.accuracy, 1.0);
        EXPECT_EQ(report.per_user.size(), 20u);
        EXPECT_EQ(report.per_user[0].user_id, b.corpus[0].user_id);
    }
}

TEST(RunExperiment, TwoWrongPositives) {
    auto b = synthetic::generate({10, 7});
    std::vector<ScriptedRule> wrong;
    for (int i : {0, 3})
        wrong.push_back(testsupport::contains({"Question: Analyze", synthetic::marker(b.corpus[i].user_id)}, "Answer: B"));
    auto report = run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, resources_for(b, wrong));
    EXPECT_EQ(report.confusion, confusion(8, 0, 2, 10));
    EXPECT_NEAR(report.metrics.recall, 0.8, 1e-12);
    EXPECT_NEAR(report.metrics.precision, 1.0, 1e-12);
    EXPECT_NEAR(report.metrics.f1, 0.889, 0.0005);
}

TEST(RunExperiment, FailuresCountAsIncorrect) {
    auto b = synthetic::generate({5, 7});
    std::vector<ScriptedRule> broken = {
        testsupport::contains({"Question: Analyze", synthetic::marker(b.corpus[0].user_id)}, "I would rather not say."),
        testsupport::contains({"Question: Analyze", synthetic::marker(b.corpus[7].user_id)}, "Hmm.")};
    auto r = resources_for(b, broken);
    auto report = run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, r);
    EXPECT_EQ(report.confusion.unparseable_depressed, 1);
    EXPECT_EQ(report.confusion.unparseable_non_depressed, 1);
    EXPECT_EQ(report.confusion.total(), 10);
    EXPECT_FALSE(report.per_user[0].parse_ok);
    EXPECT_EQ(report.per_user[0].error, "unparseable model output");
    auto cells = oracle::tally(report.per_user);
    EXPECT_EQ(cells.fn, 1);
    EXPECT_EQ(cells.fp, 1);
    EXPECT_NEAR(report.metrics.recall, 0.8, 1e-12);

    // An unscripted prompt is a backend error, also scored as wrong.
    auto extra = b.corpus;
    extra.push_back(testsupport::fixed_timeline());
    auto with_unknown = run_experiment(extra, ExperimentSetting::few_shot(), Split::IID, r);
    EXPECT_EQ(with_unknown.confusion.unparseable_depressed, 2);
    EXPECT_NE(with_unknown.per_user.back().error.find("no scripted rule"), std::string::npos)
        << with_unknown.per_user.back().error;
}

TEST(RunExperiment, FailsFastOnMissingResources) {
    auto b = synthetic::generate({3, 7});
    auto calls = std::make_shared<int>(0);
    struct Counting : LlmBackend {
        std::shared_ptr<int> n;
        std::string complete(const CompletionRequest&) override {
            ++*n;
            return "Answer: A";
        }
        std::string identity() const override { return "counting"; }
    };
    ExperimentResources r;
    auto backend = std::make_shared<Counting>();
    backend->n = calls;
    r.backend = backend;
    EXPECT_THROW(run_experiment(b.corpus, ExperimentSetting::full_data(), Split::IID, r), ConfigError);
    r.heuristics = HeuristicTable{{b.corpus[0].user_id, b.heuristics.at(b.corpus[0].user_id)}};
    EXPECT_THROW(run_experiment(b.corpus, ExperimentSetting::full_data(), Split::IID, r), ConfigError);
    EXPECT_THROW(run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::OOD, r), ConfigError);
    r.perturb = PerturbConfig{};
    EXPECT_THROW(run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, r), ConfigError);
    r.perturb.reset();
    auto unlabeled = b.corpus;
    unlabeled[1].label.reset();
    EXPECT_THROW(run_experiment(unlabeled, ExperimentSetting::few_shot(), Split::IID, r), ConfigError);
    EXPECT_EQ(*calls, 0);
}

TEST(RunExperiment, OodAtRateZeroEqualsIid) {
    auto b = synthetic::generate({10, 7});
    auto r = resources_for(b);
    auto iid = run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, r);
    PerturbConfig pc;
    pc.word_rate = 0.0;
    r.perturb = pc;
    auto ood = run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::OOD, r);
    EXPECT_EQ(ood.confusion, iid.confusion);
    EXPECT_EQ(ood.metrics, iid.metrics);
    EXPECT_EQ(ood.per_user, iid.per_user);
    EXPECT_EQ(ood.split, Split::OOD);
}

TEST(RunExperiment, ParallelMatchesSerial) {
    auto b = synthetic::generate({10, 7});
    auto r = resources_for(b);
    auto serial = serialize_report(run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, r));
    r.max_parallel = 4;
    EXPECT_EQ(serialize_report(run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, r)), serial);
}

TEST(Reports, SaveIsByteIdenticalAndRoundTrips) {
    TempDir dir;
    auto b = synthetic::generate({10, 7});
    auto run = [&] { return run_experiment(b.corpus, ExperimentSetting::full_data(), Split::IID, resources_for(b)); };
    auto report = run();
    save_report(report, dir / "a.json");
    save_report(run(), dir / "b.json");
    EXPECT_EQ(jsonio::read_file(dir / "a.json"), jsonio::read_file(dir / "b.json"));
    auto loaded = load_report(dir / "a.json");
    EXPECT_EQ(loaded.confusion, report.confusion);
    EXPECT_EQ(loaded.per_user, report.per_user);
    EXPECT_EQ(loaded.config_digest, report.config_digest);
    EXPECT_EQ(serialize_report(loaded), serialize_report(report));

    ExperimentReport half;
    half.per_user = {{"a", Label::Depressed, Label::Depressed, true, ""}, {"b", Label::NonDepressed, Label::Depressed, true, ""}};
    half.confusion = tally(half.per_user);
    half.metrics = compute_metrics(half.confusion);
    EXPECT_NE(serialize_report(half).find("\"accuracy\": 0.500"), std::string::npos) << serialize_report(half);
}

TEST(Reports, TamperedReportsRejected) {
    auto b = synthetic::generate({5, 7});
    auto j = to_json(run_experiment(b.corpus, ExperimentSetting::few_shot(), Split::IID, resources_for(b)));
    auto bad_metric = j;
    bad_metric["f1"] = 0.5;
    EXPECT_THROW(report_from_json(bad_metric), ValidationError);
    auto bad_cells = j;
    bad_cells["confusion"]["tp"] = 4;
    EXPECT_THROW(report_from_json(bad_cells), ValidationError);
    EXPECT_NO_THROW(report_from_json(j));
}

TEST(ConfigDigest, CoversSplitCorpusAndPerturbation) {
    auto b = synthetic::generate({5, 7});
    auto r = resources_for(b);
    auto iid = config_digest(experiment_config_json(b.corpus, ExperimentSetting::few_shot(), Split::IID, r));
    auto smaller = b.corpus;
    smaller.pop_back();
    EXPECT_NE(iid, config_digest(experiment_config_json(smaller, ExperimentSetting::few_shot(), Split::IID, r)));
    r.perturb = PerturbConfig{};
    auto ood = config_digest(experiment_config_json(b.corpus, ExperimentSetting::few_shot(), Split::OOD, r));
    EXPECT_NE(iid, ood);
    r.perturb->seed = 5;
    EXPECT_NE(ood, config_digest(experiment_config_json(b.corpus, ExperimentSetting::few_shot(), Split::OOD, r)));
}

TEST(Ablation, SixRungsWithExpectedSections) {
    auto b = synthetic::generate({5, 7});
    auto r = resources_for(b);
    std::mutex m;
    std::vector<std::vector<Section>> sections;
    r.observer = [&](const std::string&, const PromptText& p) {
        std::lock_guard lock(m);
        sections.push_back(p.sections);
    };
    auto reports = run_ablation_suite(b.corpus, ExperimentSetting::full_data(), Split::IID, r);
    ASSERT_EQ(reports.size(), 6u);
    ASSERT_EQ(sections.size(), 60u);
    const auto ladder = ablation_ladder(ExperimentSetting::full_data());
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(reports[i].setting, ladder[i].setting);
        EXPECT_EQ(reports[i].metrics.f1, 1.0);
    }
    // The barest rung: Question, Options, Posts, Answer only.
    EXPECT_EQ(sections[50], (std::vector<Section>{Section::Question, Section::Options, Section::Posts, Section::Answer}));
    // Without A: few-shot with CoT demos and no candidate line.
    EXPECT_EQ(ladder[1].setting.mode, Mode::FewShot);
    EXPECT_EQ(sections[10], (std::vector<Section>{Section::Question, Section::Options, Section::DiagnosisCriteria,
                                                  Section::Demonstrations, Section::Posts, Section::Answer,
                                                  Section::Explanation}));
    EXPECT_THROW(ablation_ladder(ExperimentSetting::few_shot()), ConfigError);
}

TEST(Sweep, SelectorAndDemoAxes) {
    auto b = synthetic::generate({5, 7});
    auto r = resources_for(b);
    auto selectors = run_sweep(b.corpus, ExperimentSetting::few_shot(), Split::IID, SweepAxis::Selector,
                               {"random", "recent", "sentiment"}, r);
    EXPECT_EQ(selectors.reports.size(), 3u);
    EXPECT_EQ(selectors.reports[2].setting.selector, SelectorStrategy::Sentiment);
    EXPECT_EQ(selectors.to_csv(), "selector,f1\nrandom,1.000\nrecent,1.000\nsentiment,1.000\n");

    std::vector<std::string> bodies;
    r.observer = [&](const std::string&, const PromptText& p) { bodies.push_back(p.body); };
    auto demos = run_sweep(b.corpus, ExperimentSetting::few_shot(), Split::IID, SweepAxis::NumDemos, {"0", "1", "2"}, r);
    ASSERT_EQ(demos.reports.size(), 3u);
    EXPECT_EQ(demos.reports[0].setting.mode, Mode::ZeroShot);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(bodies[i].find("Example:"), std::string::npos);
    for (std::size_t i = 10; i < 20; ++i) EXPECT_NE(bodies[i].find("Example:"), std::string::npos);
    auto csv = demos.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

    EXPECT_THROW(run_sweep(b.corpus, ExperimentSetting::few_shot(), Split::IID, SweepAxis::NumDemos, {"4"}, r),
                 ConfigError);  // only two built-in demonstrations
    EXPECT_THROW(run_sweep(b.corpus, ExperimentSetting::few_shot(), Split::IID, SweepAxis::NumPosts, {}, r), ConfigError);
    EXPECT_THROW(apply_sweep_value(ExperimentSetting::few_shot(), SweepAxis::NumPosts, "3x"), ConfigError);
    EXPECT_EQ(parse_sweep_axis("demos"), SweepAxis::NumDemos);
}

TEST(CrossValidation, PooledOverFolds) {
    auto b = synthetic::generate({10, 7});
    std::vector<ScriptedRule> wrong = {
        testsupport::contains({"Question: Analyze", synthetic::marker(b.corpus[2].user_id)}, "Answer: B")};
    auto cv = run_cross_validation(b.corpus, ExperimentSetting::few_shot(), Split::IID, resources_for(b, wrong), 5, 3);
    ASSERT_EQ(cv.folds.size(), 5u);
    EXPECT_EQ(cv.pooled, confusion(9, 0, 1, 10));
    for (const auto& f : cv.folds) EXPECT_EQ(f.per_user.size(), 4u);
    EXPECT_NEAR(cv.metrics.recall, 0.9, 1e-12);
}
