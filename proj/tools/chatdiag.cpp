// chatdiag: command-line front end for the diagnosis pipeline, evaluation
// harness, dialogue loop and HTTP service.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "chatdiag/chatdiag.hpp"

namespace {

using namespace chatdiag;

enum Exit { kOk = 0, kStartup = 1, kUsage = 2, kValidation = 3, kBackend = 4, kUnparseable = 5 };

struct PipelineFlags {
    std::string corpus;
    std::string backend;
    std::string mode = "few";
    std::string selector = "recent";
    int n = 4;
    int k = -1;  // -1: mode default (0 for zero-shot, 2 otherwise)
    std::uint64_t seed = 0;
    bool no_cot = false;
    bool no_criteria = false;
    std::string heuristics;
    bool baseline_heuristic = false;
    std::string resources;
    std::string image_captions;
    std::string scorer = "lexicon";
    long token_budget = PromptOptions{}.token_budget;
    std::size_t parallel = 1;
    std::string record;
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f, bool corpus_required = true) {
    auto* c = cmd->add_option("--corpus", f.corpus, "JSONL corpus, one user timeline per line");
    if (corpus_required) c->required();
    cmd->add_option("--backend", f.backend, "scripted:<rules.jsonl> | remote:<profile.json>")->required();
    cmd->add_option("--mode", f.mode, "zero | few | full")->check(CLI::IsMember({"zero", "few", "full"}));
    cmd->add_option("--selector", f.selector, "random | recent | sentiment")
        ->check(CLI::IsMember({"random", "recent", "sentiment"}));
    cmd->add_option("--n", f.n, "posts per prompt");
    cmd->add_option("--k", f.k, "demonstrations per prompt");
    cmd->add_option("--seed", f.seed, "random-selector seed");
    cmd->add_flag("--no-cot", f.no_cot, "omit demonstration explanations");
    cmd->add_flag("--no-criteria", f.no_criteria, "omit the diagnostic criteria block");
    cmd->add_option("--heuristics", f.heuristics, "answer heuristics JSONL (full mode)");
    cmd->add_flag("--baseline-heuristic", f.baseline_heuristic, "derive answer heuristics from post negativity");
    cmd->add_option("--resources", f.resources, "criteria + demonstrations JSON");
    cmd->add_option("--image-captions", f.image_captions, "uri -> caption JSON for uri-only images");
    cmd->add_option("--scorer", f.scorer, "negativity scorer: lexicon | llm")->check(CLI::IsMember({"lexicon", "llm"}));
    cmd->add_option("--token-budget", f.token_budget, "prompt token budget");
    cmd->add_option("--parallel", f.parallel, "concurrent users / requests");
    cmd->add_option("--record", f.record, "append digest rules for every completion to this JSONL file");
}

ExperimentSetting setting_of(const PipelineFlags& f) {
    ExperimentSetting s;
    s.mode = parse_mode(f.mode);
    s.k = f.k >= 0 ? f.k : (s.mode == Mode::ZeroShot ? 0 : 2);
    s.n = f.n;
    s.selector = parse_selector(f.selector);
    s.use_cot = !f.no_cot;
    s.use_criteria = !f.no_criteria;
    s.use_heuristic = s.mode == Mode::FullData;
    s.validate();
    return s;
}

ExperimentResources resources_of(const PipelineFlags& f) {
    ExperimentResources r;
    r.backend = make_backend(f.backend);
    if (!f.record.empty()) r.backend = std::make_shared<RecordingBackend>(r.backend, f.record);
    if (!f.resources.empty()) r.prompts = load_prompt_resources(f.resources);
    if (!f.heuristics.empty()) r.heuristics = load_heuristics(f.heuristics);
    r.baseline_heuristic = f.baseline_heuristic;
    if (f.scorer == "llm")
        r.scorer = std::make_shared<LlmScorer>(r.backend);
    else
        r.scorer = std::make_shared<LexiconScorer>(LexiconScorer::default_lexicon());
    if (!f.image_captions.empty())
        r.descriptor = DescriptorBackend{
            std::make_shared<ScriptedImageProvider>(synthetic::load_image_captions(f.image_captions)), nullptr, f.parallel};
    r.selector_seed = f.seed;
    r.prompt_options.token_budget = f.token_budget;
    r.max_parallel = f.parallel;
    return r;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');)
        if (!item.empty()) out.emplace_back(text::trim(item));
    return out;
}

std::string summary(const ExperimentReport& r) {
    return "f1=" + text::fixed(r.metrics.f1, 3) + " precision=" + text::fixed(r.metrics.precision, 3) +
           " recall=" + text::fixed(r.metrics.recall, 3) + " accuracy=" + text::fixed(r.metrics.accuracy, 3) +
           " unparseable=" + std::to_string(r.confusion.unparseable());
}

const UserTimeline& pick_user(const std::vector<UserTimeline>& corpus, const std::string& user) {
    if (corpus.empty()) throw ValidationError("corpus", "", "no timelines");
    if (user.empty()) return corpus.front();
    for (const auto& t : corpus)
        if (t.user_id == user) return t;
    throw ValidationError("corpus", "user_id", "no timeline for user " + user);
}

std::optional<PerturbConfig> perturb_of(Split split, double rate, std::uint64_t seed) {
    if (split == Split::IID) return std::nullopt;
    PerturbConfig p;
    p.word_rate = rate;
    p.seed = seed;
    return p;
}

volatile std::sig_atomic_t g_stop = 0;
httplib::Server* g_server = nullptr;

void on_signal(int) {
    g_stop = 1;
    if (g_server) g_server->stop();
}

int run(int argc, char** argv) {
    CLI::App app{"Explainable depression screening over social-media timelines"};
    app.require_subcommand(1);

    // diagnose
    PipelineFlags dflags;
    std::string d_user;
    bool d_json = false;
    auto* diagnose = app.add_subcommand("diagnose", "Diagnose one or all users of a corpus");
    add_pipeline_flags(diagnose, dflags);
    diagnose->add_option("--user", d_user, "only this user_id");
    diagnose->add_flag("--json", d_json, "print one JSON diagnosis per line");

    // chat
    PipelineFlags cflags;
    std::string c_user;
    auto* chat = app.add_subcommand("chat", "Diagnose a user, then chat on stdin/stdout");
    add_pipeline_flags(chat, cflags);
    chat->add_option("--user", c_user, "user_id (default: first in corpus)");

    // eval
    PipelineFlags eflags;
    std::string e_split = "iid", e_out;
    double e_rate = 0.15;
    std::uint64_t e_perturb_seed = 0;
    int e_folds = 0;
    auto* eval = app.add_subcommand("eval", "Evaluate a setting over a labeled corpus");
    add_pipeline_flags(eval, eflags);
    eval->add_option("--split", e_split, "iid | ood")->check(CLI::IsMember({"iid", "ood"}));
    eval->add_option("--rate", e_rate, "OOD word perturbation rate");
    eval->add_option("--perturb-seed", e_perturb_seed, "OOD perturbation seed");
    eval->add_option("--folds", e_folds, "stratified cross-validation folds (0 = whole corpus)");
    eval->add_option("--out", e_out, "report JSON path");

    // sweep
    PipelineFlags sflags;
    std::string s_axis, s_values, s_split = "iid", s_out;
    double s_rate = 0.15;
    auto* sweep = app.add_subcommand("sweep", "Vary one knob and report F1 per value");
    add_pipeline_flags(sweep, sflags);
    sweep->add_option("--axis", s_axis, "selector | n | k")->required();
    sweep->add_option("--values", s_values, "comma-separated values")->required();
    sweep->add_option("--split", s_split, "iid | ood")->check(CLI::IsMember({"iid", "ood"}));
    sweep->add_option("--rate", s_rate, "OOD word perturbation rate");
    sweep->add_option("--out", s_out, "output prefix: writes <out>.csv and <out>.json");

    // ablate
    PipelineFlags aflags;
    std::string a_split = "iid", a_out;
    double a_rate = 0.15;
    auto* ablate = app.add_subcommand("ablate", "Run the six-rung module ablation from a full-data setting");
    add_pipeline_flags(ablate, aflags);
    ablate->add_option("--split", a_split, "iid | ood")->check(CLI::IsMember({"iid", "ood"}));
    ablate->add_option("--rate", a_rate, "OOD word perturbation rate");
    ablate->add_option("--out", a_out, "output prefix: writes <out>.csv and <out>.json");

    // perturb
    std::string p_corpus, p_out;
    double p_rate = 0.15;
    std::uint64_t p_seed = 0;
    auto* perturb = app.add_subcommand("perturb", "Write a character-perturbed copy of a corpus");
    perturb->add_option("--in,--corpus", p_corpus, "input JSONL corpus")->required();
    perturb->add_option("--rate", p_rate, "word perturbation rate");
    perturb->add_option("--seed", p_seed, "perturbation seed");
    perturb->add_option("--out", p_out, "output JSONL (default: stdout)");

    // select
    std::string sel_corpus, sel_selector = "recent";
    int sel_n = 4;
    std::uint64_t sel_seed = 0;
    auto* select_cmd = app.add_subcommand("select", "Print the posts each selector keeps");
    select_cmd->add_option("--corpus", sel_corpus, "JSONL corpus")->required();
    select_cmd->add_option("--selector", sel_selector, "random | recent | sentiment")
        ->check(CLI::IsMember({"random", "recent", "sentiment"}));
    select_cmd->add_option("--n", sel_n, "posts to keep");
    select_cmd->add_option("--seed", sel_seed, "random-selector seed");

    // serve
    std::string v_config;
    std::optional<int> v_port;
    std::optional<std::string> v_host;
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--config", v_config, "service config JSON (default: $CHATDIAG_CONFIG)");
    serve->add_option("--port", v_port, "override the configured port");
    serve->add_option("--host", v_host, "override the configured bind address");

    // synth
    std::string y_out;
    int y_per_class = 20;
    std::uint64_t y_seed = 7;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus, rules and heuristics");
    synth->add_option("--out-dir", y_out, "output directory")->required();
    synth->add_option("--per-class", y_per_class, "users per class");
    synth->add_option("--seed", y_seed, "generator seed");

    // resources
    std::string r_out;
    auto* res_cmd = app.add_subcommand("resources", "Write the default criteria and demonstrations as JSON");
    res_cmd->add_option("--out", r_out, "output path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    if (*diagnose) {
        const auto setting = setting_of(dflags);
        const auto resources = resources_of(dflags);
        const auto corpus = load_corpus(dflags.corpus);
        validate_resources(setting, resources, &corpus);
        for (const auto& t : corpus) {
            if (!d_user.empty() && t.user_id != d_user) continue;
            auto result = diagnose_timeline(t, setting, resources);
            if (d_json) {
                json j = to_json(result.diagnosis);
                j["user_id"] = t.user_id;
                j["selected_post_ids"] = json::array();
                for (const auto& p : result.selected_posts) j["selected_post_ids"].push_back(p.post_id);
                std::cout << jsonio::dump_canonical(j, -1) << "\n";
            } else {
                std::cout << t.user_id << ": " << to_string(result.diagnosis.label) << "\n";
                if (!result.diagnosis.explanation.empty())
                    std::cout << "Explanation: " << result.diagnosis.explanation << "\n";
            }
            for (const auto& w : result.warnings) std::cerr << "warning: " << t.user_id << ": " << w << "\n";
        }
        if (!d_user.empty() &&
            std::none_of(corpus.begin(), corpus.end(), [&](const UserTimeline& t) { return t.user_id == d_user; }))
            throw ValidationError("corpus", "user_id", "no timeline for user " + d_user);
        return kOk;
    }

    if (*chat) {
        const auto setting = setting_of(cflags);
        const auto resources = resources_of(cflags);
        const auto corpus = load_corpus(cflags.corpus);
        const auto& user = pick_user(corpus, c_user);
        auto result = diagnose_timeline(user, setting, resources);
        DialogueOptions options;
        options.prompt_options = resources.prompt_options;
        DialogueEngine engine(resources.backend, options, random_session_ids(),
                              [](const std::string& s) { std::cout << s << "\n" << std::flush; });
        auto session = engine.start_session(user.user_id, result.selected_posts, result.diagnosis);
        if (session.status == SessionStatus::Ended)
            throw GatewayError(GatewayErrorKind::Transport, session.error.value_or("opening turn failed"));
        for (std::string line; std::cout << "> " << std::flush, std::getline(std::cin, line);) {
            if (text::trim(line) == "/quit") break;
            if (text::trim(line).empty()) continue;
            engine.step(session, line);
        }
        session = end_session(session);
        return kOk;
    }

    if (*eval) {
        const auto setting = setting_of(eflags);
        auto resources = resources_of(eflags);
        const auto split = parse_split(e_split);
        resources.perturb = perturb_of(split, e_rate, e_perturb_seed);
        const auto corpus = load_corpus(eflags.corpus);
        if (e_folds > 0) {
            auto cv = run_cross_validation(corpus, setting, split, resources, e_folds, eflags.seed);
            for (std::size_t i = 0; i < cv.folds.size(); ++i)
                std::cout << "fold " << i + 1 << ": " << summary(cv.folds[i]) << "\n";
            std::cout << "pooled: f1=" << text::fixed(cv.metrics.f1, 3) << " precision=" << text::fixed(cv.metrics.precision, 3)
                      << " recall=" << text::fixed(cv.metrics.recall, 3) << " accuracy=" << text::fixed(cv.metrics.accuracy, 3)
                      << "\n";
            if (!e_out.empty()) {
                json all = json::array();
                for (const auto& r : cv.folds) all.push_back(to_json(r));
                jsonio::write_file(e_out, jsonio::dump_canonical(all));
            }
            return kOk;
        }
        auto report = run_experiment(corpus, setting, split, resources);
        std::cout << summary(report) << "\n";
        if (!e_out.empty()) save_report(report, e_out);
        return kOk;
    }

    if (*sweep) {
        const auto base = setting_of(sflags);
        auto resources = resources_of(sflags);
        const auto split = parse_split(s_split);
        resources.perturb = perturb_of(split, s_rate, 0);
        auto result = run_sweep(load_corpus(sflags.corpus), base, split, parse_sweep_axis(s_axis), split_csv(s_values), resources);
        std::cout << result.to_csv();
        if (!s_out.empty()) {
            jsonio::write_file(s_out + ".csv", result.to_csv());
            json all = json::array();
            for (const auto& r : result.reports) all.push_back(to_json(r));
            jsonio::write_file(s_out + ".json", jsonio::dump_canonical(all));
        }
        return kOk;
    }

    if (*ablate) {
        auto base = setting_of(aflags);
        if (base.mode != Mode::FullData) throw ConfigError("ablate starts from --mode full");
        auto resources = resources_of(aflags);
        const auto split = parse_split(a_split);
        resources.perturb = perturb_of(split, a_rate, 0);
        const auto ladder = ablation_ladder(base);
        auto reports = run_ablation_suite(load_corpus(aflags.corpus), base, split, resources);
        std::string csv = "rung,f1\n";
        json all = json::array();
        for (std::size_t i = 0; i < reports.size(); ++i) {
            csv += "\"" + ladder[i].name + "\"," + text::fixed(reports[i].metrics.f1, 3) + "\n";
            all.push_back(to_json(reports[i]));
        }
        std::cout << csv;
        if (!a_out.empty()) {
            jsonio::write_file(a_out + ".csv", csv);
            jsonio::write_file(a_out + ".json", jsonio::dump_canonical(all));
        }
        return kOk;
    }

    if (*perturb) {
        PerturbConfig config;
        config.word_rate = p_rate;
        config.seed = p_seed;
        config.validate();
        std::vector<UserTimeline> out;
        PerturbStats stats;
        for (const auto& t : load_corpus(p_corpus)) out.push_back(perturb_timeline(t, config, &stats));
        if (p_out.empty())
            std::cout << corpus_to_jsonl(out);
        else
            save_corpus(out, p_out);
        std::cerr << "perturbed " << stats.perturbed_words << " of " << stats.eligible_words << " eligible words\n";
        return kOk;
    }

    if (*select_cmd) {
        SelectorConfig config{parse_selector(sel_selector), sel_n, std::nullopt};
        if (config.strategy == SelectorStrategy::Random) config.seed = sel_seed;
        const auto scorer = LexiconScorer::default_lexicon();
        for (const auto& t : load_corpus(sel_corpus)) {
            json ids = json::array();
            for (const auto& p : select(t.posts, config, &scorer)) ids.push_back(p.post_id);
            std::cout << jsonio::dump_canonical({{"user_id", t.user_id}, {"selected_post_ids", ids}}, -1) << "\n";
        }
        return kOk;
    }

    if (*serve) {
        if (v_config.empty())
            if (const char* env = std::getenv("CHATDIAG_CONFIG")) v_config = env;
        if (v_config.empty()) throw ConfigError("serve needs --config or CHATDIAG_CONFIG");
        auto config = load_service_config(v_config);
        if (v_port) config.port = *v_port;
        if (v_host) config.host = *v_host;
        ChatService service(config);
        httplib::Server server;
        service.mount(server);
        if (!server.bind_to_port(config.host, config.port))
            throw ConfigError("cannot bind " + config.host + ":" + std::to_string(config.port));
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "listening on " << config.host << ":" << config.port << "\n";
        server.listen_after_bind();
        return kOk;
    }

    if (*synth) {
        synthetic::write_bundle(y_out, {y_per_class, y_seed});
        std::cerr << "wrote synthetic bundle to " << y_out << "\n";
        return kOk;
    }

    if (*res_cmd) {
        const auto dump = jsonio::dump_canonical(to_json(default_prompt_resources()));
        if (r_out.empty())
            std::cout << dump;
        else
            jsonio::write_file(r_out, dump);
        return kOk;
    }
    return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const chatdiag::UnparseableOutput& e) {
        std::cerr << "error: " << e.what() << "\n" << e.raw() << "\n";
        return kUnparseable;
    } catch (const chatdiag::GatewayError& e) {
        std::cerr << "error: backend: " << e.what() << "\n";
        return kBackend;
    } catch (const chatdiag::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const chatdiag::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const chatdiag::StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kStartup;
    }
}
