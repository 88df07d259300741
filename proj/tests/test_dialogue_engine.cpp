#include <gtest/gtest.h>

#include <deque>

#include "support.hpp"

using namespace chatdiag;
using testsupport::contains;

namespace {

// Replies from a queue and keeps every request.
class QueueBackend : public LlmBackend {
public:
    explicit QueueBackend(std::deque<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const CompletionRequest& request) override {
        requests.push_back(request);
        if (replies_.empty()) throw GatewayError(GatewayErrorKind::Transport, "queue empty", "");
        auto r = replies_.front();
        replies_.pop_front();
        return r;
    }
    std::string identity() const override { return "queue"; }
    void push(std::string reply) { replies_.push_back(std::move(reply)); }

    std::vector<CompletionRequest> requests;

private:
    std::deque<std::string> replies_;
};

Diagnosis diagnosis() {
    Diagnosis d;
    d.label = Label::Depressed;
    d.explanation = "Post t4 shows fatigue, criterion 6.";
    d.setting = ExperimentSetting::few_shot();
    return d;
}

std::function<std::string()> counter_ids() {
    auto n = std::make_shared<int>(0);
    return [n] { return "s" + std::to_string((*n)++); };
}

std::string history_section(const std::string& body) {
    auto start = body.find("Dialogue history:\n");
    auto end = body.rfind("\nInput: ");
    if (start == std::string::npos) return "";
    start += 18;
    return end >= start ? body.substr(start, end - start + 1) : "";
}

}  // namespace

TEST(StartSession, OpeningTurnFromNoneInput) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{"Hi, how have you been sleeping?"});
    std::vector<std::string> shown;
    DialogueEngine engine(backend, {}, counter_ids(), [&](const std::string& s) { shown.push_back(s); });
    auto s = engine.start_session("user-fixed", testsupport::fixed_timeline().posts, diagnosis());
    ASSERT_EQ(s.history.size(), 1u);
    EXPECT_EQ(s.history[0], (DialogueTurn{Speaker::System, "Hi, how have you been sleeping?", 0}));
    EXPECT_EQ(s.status, SessionStatus::AwaitingUser);
    EXPECT_TRUE(alternation_holds(s));
    ASSERT_EQ(backend->requests.size(), 1u);
    const auto& body = backend->requests[0].prompt.body;
    EXPECT_NE(body.find("Dialogue history:\nInput: None"), std::string::npos);
    EXPECT_DOUBLE_EQ(backend->requests[0].temperature, kDialogueTemperature);
    ASSERT_EQ(shown.size(), 2u);
    EXPECT_EQ(shown[0], "Diagnosis: depressed\nExplanation: Post t4 shows fatigue, criterion 6.");
    EXPECT_EQ(shown[1], "Hi, how have you been sleeping?");
}

TEST(StartSession, GatewayFailureEndsSession) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{});
    DialogueEngine engine(backend, {}, counter_ids());
    auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
    EXPECT_EQ(s.status, SessionStatus::Ended);
    EXPECT_TRUE(s.history.empty());
    ASSERT_TRUE(s.error);
    EXPECT_NE(s.error->find("queue empty"), std::string::npos);
    EXPECT_THROW(engine.step(s, "hello"), StateError);
}

TEST(StartSession, SessionsAreIndependent) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{"G1", "G2", "R"});
    DialogueEngine engine(backend, {}, random_session_ids());
    auto posts = testsupport::fixed_timeline().posts;
    auto a = engine.start_session("u", posts, diagnosis());
    auto b = engine.start_session("u", posts, diagnosis());
    EXPECT_NE(a.session_id, b.session_id);
    EXPECT_EQ(a.session_id.size(), 32u);
    engine.step(a, "only a");
    EXPECT_EQ(a.history.size(), 3u);
    EXPECT_EQ(b.history.size(), 1u);
}

TEST(Step, AppendsUserThenSystem) {
    auto backend = testsupport::scripted({contains({"Input: None"}, "G"), contains({"Input: I sleep badly"}, "R1")});
    DialogueEngine engine(backend, {}, counter_ids());
    auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
    EXPECT_EQ(engine.step(s, "I sleep badly"), "R1");
    EXPECT_EQ(s.history, (std::vector<DialogueTurn>{
                             {Speaker::System, "G", 0}, {Speaker::User, "I sleep badly", 1}, {Speaker::System, "R1", 2}}));
    EXPECT_TRUE(alternation_holds(s));
}

TEST(Step, FiveRoundPromptsContainEveryPriorTurn) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{"R0", "R1", "R2", "R3", "R4", "R5"});
    DialogueEngine engine(backend, {}, counter_ids());
    auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
    for (int round = 1; round <= 5; ++round) {
        const std::string input = "input " + std::to_string(round);
        engine.step(s, input);
        ASSERT_TRUE(alternation_holds(s));
        const auto& body = backend->requests.back().prompt.body;
        std::string expected;
        for (std::size_t i = 0; i + 1 < s.history.size() - 1; ++i)
            expected += std::string(to_string(s.history[i].speaker)) + ": " + s.history[i].text + "\n";
        EXPECT_EQ(history_section(body), expected) << "round " << round;
        EXPECT_NE(body.find("\nInput: " + input), std::string::npos);
    }
    // Round five answers the ninth prior turn.
    EXPECT_EQ(s.history.size(), 11u);
    auto last = history_section(backend->requests.back().prompt.body);
    EXPECT_EQ(std::count(last.begin(), last.end(), '\n'), 9);
    EXPECT_EQ(last.rfind("System: R4\n"), last.size() - 11);
    EXPECT_TRUE(s.budget_events.empty());
}

TEST(Step, FailureKeepsSessionRetryable) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{"G"});
    DialogueEngine engine(backend, {}, counter_ids());
    auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
    EXPECT_THROW(engine.step(s, "are you there?"), GatewayError);
    EXPECT_EQ(s.status, SessionStatus::AwaitingUser);
    EXPECT_EQ(s.history.size(), 1u);
    EXPECT_EQ(s.pending_input, "are you there?");
    EXPECT_TRUE(alternation_holds(s));
    backend->push("yes");
    EXPECT_EQ(engine.step(s, "are you there?"), "yes");
    EXPECT_FALSE(s.pending_input);
    EXPECT_FALSE(s.error);
    EXPECT_EQ(s.history.size(), 3u);
}

TEST(Step, RejectsEmptyInputAndEmptyReplies) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{"G", "  "});
    DialogueEngine engine(backend, {}, counter_ids());
    auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
    EXPECT_THROW(engine.step(s, "   "), ValidationError);
    try {
        engine.step(s, "hello");
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), GatewayErrorKind::BadResponse);
    }
    EXPECT_EQ(s.history.size(), 1u);
}

TEST(EndSession, IdempotentAndFinal) {
    auto backend = testsupport::scripted({contains({"Input:"}, "ok")});
    DialogueEngine engine(backend, {}, counter_ids());
    auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
    engine.step(s, "one");
    auto ended = end_session(s);
    EXPECT_EQ(ended.status, SessionStatus::Ended);
    EXPECT_EQ(ended.history, s.history);
    EXPECT_EQ(end_session(ended), ended);
    EXPECT_THROW(engine.step(ended, "two"), StateError);
    EXPECT_TRUE(alternation_holds(ended));
}

TEST(Replay, ScriptedSessionIsByteIdentical) {
    auto run = [] {
        auto backend = testsupport::scripted({contains({"Input: None"}, "Hello there."),
                                              contains({"Input: I can't sleep"}, "How long has that lasted?"),
                                              contains({"Input: "}, "Thanks for sharing.")});
        DialogueEngine engine(backend, {}, counter_ids());
        auto s = engine.start_session("u", testsupport::fixed_timeline().posts, diagnosis());
        for (const char* input : {"I can't sleep", "About a month", "I feel tired", "Bye"}) engine.step(s, input);
        return jsonio::dump_canonical(to_json(end_session(s)));
    };
    const auto first = run();
    EXPECT_EQ(first, run());
    auto restored = session_from_json(json::parse(first));
    EXPECT_EQ(jsonio::dump_canonical(to_json(restored)), first);
}

TEST(Budget, OldestPairsDroppedAndRecorded) {
    auto backend = std::make_shared<QueueBackend>(std::deque<std::string>{});
    for (int i = 0; i < 10; ++i) backend->push("Reply number " + std::to_string(i) + std::string(200, '.'));
    DialogueOptions options;
    auto posts = testsupport::fixed_timeline().posts;
    const long base = build_dialogue_prompt(std::string("x"), posts, diagnosis(), {}).estimated_tokens;
    options.prompt_options.token_budget = base + 160;
    DialogueEngine engine(backend, options, counter_ids());
    auto s = engine.start_session("u", posts, diagnosis());
    for (int round = 1; round <= 4; ++round) engine.step(s, "message " + std::to_string(round));
    ASSERT_FALSE(s.budget_events.empty());
    for (const auto& e : s.budget_events) EXPECT_EQ(e.dropped_turns % 2, 0);
    for (const auto& r : backend->requests) EXPECT_LE(r.prompt.estimated_tokens, options.prompt_options.token_budget);
    // The newest turns survive; the oldest are gone.
    const auto& last = backend->requests.back().prompt.body;
    EXPECT_EQ(last.find("Reply number 0"), std::string::npos);
    EXPECT_NE(last.find("Reply number 3"), std::string::npos);
    EXPECT_EQ(s.history.size(), 9u);  // history itself is never trimmed
}
