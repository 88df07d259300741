// Diagnose one synthetic user with the bundled scripted backend, print the
// evidence, then run two dialogue rounds.
//
//   ./sample_diagnose_and_chat [data/synthetic]

#include <iostream>

#include "chatdiag/chatdiag.hpp"

int main(int argc, char** argv) {
    using namespace chatdiag;
    const std::filesystem::path dir = argc > 1 ? argv[1] : std::filesystem::path(CHATDIAG_SOURCE_DIR) / "data/synthetic";
    try {
        const auto corpus = load_corpus(dir / "corpus.jsonl");
        PipelineResources resources;
        resources.backend = make_backend("scripted:" + (dir / "rules.jsonl").string());
        resources.heuristics = load_heuristics(dir / "heuristics.jsonl");

        const auto& user = corpus.front();
        auto result = diagnose_timeline(user, ExperimentSetting::full_data(), resources);
        std::cout << "--- prompt ---\n" << result.prompt.body << "\n--- reply ---\n"
                  << result.diagnosis.raw_model_output << "\n--- evidence ---\n";
        for (const auto& e : result.diagnosis.evidence)
            std::cout << "criterion " << e.criterion_index.value_or(0) << ": " << e.snippet << "\n";

        std::cout << "--- dialogue ---\n";
        DialogueEngine engine(resources.backend, {}, random_session_ids(),
                              [](const std::string& s) { std::cout << "System: " << s << "\n"; });
        auto session = engine.start_session(user.user_id, result.selected_posts, result.diagnosis);
        for (const char* line : {"I can't sleep most nights.", "Maybe I should talk to someone."}) {
            std::cout << "User: " << line << "\n";
            engine.step(session, line);
        }
        session = end_session(session);
        std::cout << "turns: " << session.history.size() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
