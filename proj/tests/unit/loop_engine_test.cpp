#include <gtest/gtest.h>

#include <random>

#include "annot/error.hpp"
#include "annot/loop_engine.hpp"
#include "test_util.hpp"

namespace annot {
namespace {

using testing::gold_corrections;
using testing::script_from;
using testing::synthetic_records;
using testing::TempDir;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kIo;
}

struct Small {
  TempDir tmp;
  ProjectDir dir{tmp / "proj"};
  std::vector<SentenceRecord> records;
  SplitPlan plan;
};

std::unique_ptr<Small> small_setup(SplitSpec spec, std::uint64_t seed = 1) {
  auto s = std::make_unique<Small>();
  s->records = synthetic_records(spec.total() + 20, (spec.total() + 20) / 2, seed);
  testing::seed_project(s->dir, s->records);
  s->plan = make_split_plan(testing::make_dataset(s->records), spec, seed);
  return s;
}

std::unique_ptr<Project> start(Small& s, const std::string& rounds = "{}", ProjectSettings settings = {}) {
  return Project::start(s.dir, settings, s.plan, script_from("{\"seed\": 3, \"rounds\": " + rounds + "}"));
}

TEST(StoppingRule, Examples) {
  const StoppingPolicy p{0.90, 10};
  EXPECT_EQ(should_stop({}, p), StopDecision::kContinue);
  EXPECT_EQ(should_stop({0.67, 94.0 / 101.0}, p), StopDecision::kStopSuccess);
  EXPECT_EQ(should_stop({0.67}, p), StopDecision::kContinue);
  EXPECT_EQ(should_stop(std::vector<double>(10, 0.85), p), StopDecision::kStopExhausted);
  EXPECT_EQ(should_stop({0.90}, p), StopDecision::kStopSuccess);
  EXPECT_EQ(should_stop({0.95, 0.5}, p), StopDecision::kContinue);
}

TEST(StoppingRule, PolicyValidation) {
  EXPECT_THROW((StoppingPolicy{0.0, 10}.validate()), Error);
  EXPECT_THROW((StoppingPolicy{1.01, 10}.validate()), Error);
  EXPECT_THROW((StoppingPolicy{0.9, 0}.validate()), Error);
  EXPECT_NO_THROW((StoppingPolicy{1.0, 1}.validate()));
}

// Property: the decision only depends on the latest value and history length.
TEST(StoppingRule, DecisionProperty) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const StoppingPolicy p{0.5 + u(rng) / 2, 1 + rng() % 10};
    std::vector<double> h(rng() % 12);
    for (auto& v : h) v = u(rng);
    const auto d = should_stop(h, p);
    if (h.empty()) ASSERT_EQ(d, StopDecision::kContinue);
    else if (h.back() >= p.target_accuracy) ASSERT_EQ(d, StopDecision::kStopSuccess);
    else if (h.size() >= p.max_rounds) ASSERT_EQ(d, StopDecision::kStopExhausted);
    else ASSERT_EQ(d, StopDecision::kContinue);
  }
}

TEST(ProjectStart, ErrorsAndImmutability) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  ProjectSettings bad;
  bad.policy.target_accuracy = 0.0;
  EXPECT_EQ(code_of([&] { start(*s, "{}", bad); }), ErrorCode::kInvalidArgument);
  EXPECT_FALSE(s->dir.started());
  EXPECT_EQ(code_of([&] { Project::start(s->dir, {}, s->plan, std::nullopt); }), ErrorCode::kConfiguration);

  { auto p = start(*s); EXPECT_EQ(p->phase(), Phase::kPretraining); }
  EXPECT_EQ(code_of([&] { start(*s); }), ErrorCode::kConflict);

  TempDir empty;
  EXPECT_EQ(code_of([&] { Project::open(ProjectDir(empty / "nothing")); }), ErrorCode::kNotFound);
}

TEST(ProjectStart, SecondHandleIsLockedOut) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  auto p = start(*s);
  EXPECT_EQ(code_of([&] { Project::open(s->dir); }), ErrorCode::kConflict);
}

TEST(Pretraining, StoresCommentsAndAdvances) {
  auto s = small_setup(SplitSpec{30, 25, {20}, 10});
  auto p = start(*s);
  const auto comments = p->run_pretraining();
  EXPECT_NE(comments.find("<thinking>I compared the 30 examples."), std::string::npos);
  EXPECT_EQ(p->phase(), Phase::kSupervised);
  const auto r = p->round("pretraining");
  EXPECT_EQ(r.status, RoundStatus::kClosed);
  EXPECT_EQ(r.predictions.model_comments, comments);
  EXPECT_EQ(code_of([&] { p->run_pretraining(); }), ErrorCode::kConflict);
  EXPECT_EQ(code_of([&] { p->round("nope"); }), ErrorCode::kNotFound);
}

TEST(SupervisedBatches, HundredSplitsIntoFourOfTwentyFive) {
  auto s = small_setup(SplitSpec{20, 100, {20}, 10});
  auto p = start(*s);
  const auto b = p->supervised_batches();
  ASSERT_EQ(b.size(), 4u);
  for (const auto& x : b) EXPECT_EQ(x.size(), 25u);
}

TEST(SupervisedBatches, NinetySplitsGreedily) {
  auto s = small_setup(SplitSpec{20, 90, {20}, 10});
  auto p = start(*s);
  std::vector<std::size_t> sizes;
  for (const auto& x : p->supervised_batches()) sizes.push_back(x.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{25, 25, 25, 15}));

  p->run_pretraining();
  std::vector<std::string> seen;
  while (p->phase() == Phase::kSupervised) {
    const auto r = p->run_supervised_batch();
    seen.insert(seen.end(), r.item_ids.begin(), r.item_ids.end());
    p->submit_corrections(r.round_id, {});
  }
  EXPECT_EQ(seen, s->plan.supervised_ids);
  EXPECT_EQ(p->phase(), Phase::kValidation);
}

TEST(SupervisedBatches, OneOutstandingReview) {
  auto s = small_setup(SplitSpec{20, 50, {20}, 10});
  auto p = start(*s);
  EXPECT_EQ(code_of([&] { p->run_supervised_batch(); }), ErrorCode::kConflict);
  p->run_pretraining();
  const auto r = p->run_supervised_batch();
  EXPECT_EQ(r.status, RoundStatus::kAwaitingReview);
  ASSERT_TRUE(p->current_round());
  EXPECT_EQ(p->current_round()->round_id, "supervised-1");
  try {
    p->run_supervised_batch();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConflict);
    EXPECT_NE(std::string(e.what()).find("round awaiting review: supervised-1"), std::string::npos);
  }
}

TEST(Corrections, FiveOfTwentyFiveGivesEightyPercent) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  auto p = start(*s, R"({"SUPERVISED": 0.2})");
  p->run_pretraining();
  const auto r = p->run_supervised_batch();
  const auto notes = gold_corrections(*p, r);
  ASSERT_EQ(notes.size(), 5u);
  const auto closed = p->submit_corrections(r.round_id, notes, "Gerunds are never evaluative.");
  EXPECT_EQ(closed.status, RoundStatus::kClosed);
  EXPECT_DOUBLE_EQ(*closed.accuracy, 0.80);
  EXPECT_EQ(closed.guidelines, "Gerunds are never evaluative.");
  EXPECT_EQ(closed.corrections.size(), 5u);
  EXPECT_EQ(p->phase(), Phase::kValidation);

  bool feedback = false;
  for (const auto& e : p->events().all()) {
    if (e.type == "prompt" && e.data["kind"] == "FEEDBACK") {
      feedback = true;
      EXPECT_NE(e.data["rendered"].get<std::string>().find("Gerunds are never evaluative."), std::string::npos);
    }
  }
  EXPECT_TRUE(feedback);
}

TEST(Corrections, EmptyListClosesAtFullAccuracy) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  auto p = start(*s);
  p->run_pretraining();
  const auto r = p->run_supervised_batch();
  EXPECT_DOUBLE_EQ(*p->submit_corrections(r.round_id, {}).accuracy, 1.0);
  EXPECT_EQ(code_of([&] { p->submit_corrections(r.round_id, {}); }), ErrorCode::kConflict);
}

TEST(Corrections, InvalidNotesAreUnprocessable) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  auto p = start(*s, R"({"SUPERVISED": 0.2})");
  p->run_pretraining();
  const auto r = p->run_supervised_batch();
  const auto& e = r.predictions.entries.front();
  const CorrectionNote contradicts(e.record_id, flip(e.answer), e.answer, "");
  EXPECT_EQ(code_of([&] { p->submit_corrections(r.round_id, {contradicts}); }), ErrorCode::kUnprocessable);
  const CorrectionNote outside(s->plan.evaluation_ids[0], Label::kPositive, Label::kNegative, "");
  EXPECT_EQ(code_of([&] { p->submit_corrections(r.round_id, {outside}); }), ErrorCode::kUnprocessable);
  const CorrectionNote ok(e.record_id, e.answer, flip(e.answer), "");
  EXPECT_EQ(code_of([&] { p->submit_corrections(r.round_id, {ok, ok}); }), ErrorCode::kUnprocessable);
  EXPECT_EQ(code_of([&] { p->submit_corrections("supervised-9", {}); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { p->corrections_from_json(r.round_id, nlohmann::json::object()); }),
            ErrorCode::kUnprocessable);
  const auto parsed = p->corrections_from_json(
      r.round_id, nlohmann::json::array({{{"id", e.record_id},
                                          {"correct_answer", p->scheme().name_of(flip(e.answer))},
                                          {"reason", "r"}}}));
  ASSERT_EQ(parsed.size(), 1u);
  EXPECT_EQ(parsed[0].model_answer(), e.answer);
  EXPECT_EQ(p->round(r.round_id).status, RoundStatus::kAwaitingReview);
}

TEST(Corrections, AbstentionsCountAsErrorsAfterReask) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  auto p = start(*s, R"({"SUPERVISED": {"abstain": 3}})");
  p->run_pretraining();
  const auto r = p->run_supervised_batch();
  EXPECT_TRUE(r.predictions.unparsed_ids.empty());
  std::size_t reasks = 0;
  for (const auto& e : p->events().all()) {
    if (e.type == "prompt" && e.data["kind"] == "REASK") {
      ++reasks;
      EXPECT_EQ(e.data["item_ids"].size(), 3u);
    }
  }
  EXPECT_EQ(reasks, 1u);
  EXPECT_DOUBLE_EQ(*p->submit_corrections(r.round_id, {}).accuracy, 1.0);
}

TEST(PhaseOrder, ValidationAndEvaluationGuards) {
  auto s = small_setup(SplitSpec{20, 25, {20, 20}, 10});
  auto p = start(*s, R"({"VALIDATION": [0.5, 0.0]})");
  EXPECT_EQ(code_of([&] { p->run_validation_round(); }), ErrorCode::kConflict);
  EXPECT_EQ(code_of([&] { p->run_blind_evaluation(); }), ErrorCode::kConflict);
  p->run_pretraining();
  EXPECT_EQ(code_of([&] { p->run_validation_round(); }), ErrorCode::kConflict);
  const auto r = p->run_supervised_batch();
  p->submit_corrections(r.round_id, gold_corrections(*p, r));

  const auto v1 = p->run_validation_round();
  EXPECT_DOUBLE_EQ(*v1.accuracy, 0.5);
  EXPECT_EQ(p->last_decision(), StopDecision::kContinue);
  EXPECT_EQ(code_of([&] { p->run_blind_evaluation(); }), ErrorCode::kConflict);
  const auto v2 = p->run_validation_round();
  EXPECT_DOUBLE_EQ(*v2.accuracy, 1.0);
  EXPECT_EQ(p->last_decision(), StopDecision::kStopSuccess);
  EXPECT_EQ(p->phase(), Phase::kEvaluation);
  EXPECT_EQ(code_of([&] { p->run_validation_round(); }), ErrorCode::kConflict);
  const auto m = p->run_blind_evaluation();
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  EXPECT_EQ(p->phase(), Phase::kDone);
  try {
    p->run_blind_evaluation();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConflict);
    EXPECT_NE(std::string(e.what()).find("evaluation already run"), std::string::npos);
  }
}

TEST(PhaseOrder, ValidationSendsSummaryFeedback) {
  auto s = small_setup(SplitSpec{20, 25, {40}, 10});
  auto p = start(*s, R"({"VALIDATION": 0.25})");
  p->run_pretraining();
  const auto r = p->run_supervised_batch();
  p->submit_corrections(r.round_id, {});
  const auto v = p->run_validation_round("Mind passives.");
  EXPECT_DOUBLE_EQ(*v.accuracy, 0.75);
  ASSERT_TRUE(v.metrics);
  EXPECT_EQ(v.metrics->n, 40);
  EXPECT_EQ(v.guidelines, "Mind passives.");
  nlohmann::json last_prompt;
  for (const auto& e : p->events().all()) {
    if (e.type == "prompt") last_prompt = e.data;
  }
  EXPECT_EQ(last_prompt["kind"], "SUMMARY");
  EXPECT_NE(last_prompt["rendered"].get<std::string>().find("Mind passives."), std::string::npos);
  EXPECT_NE(last_prompt["rendered"].get<std::string>().find("75.0%"), std::string::npos);
  // The only validation round failed, so the plan is exhausted.
  EXPECT_EQ(p->last_decision(), StopDecision::kStopExhausted);
  EXPECT_EQ(p->phase(), Phase::kExhausted);
  EXPECT_EQ(code_of([&] { p->run_blind_evaluation(); }), ErrorCode::kConflict);
}

TEST(PhaseOrder, MaxRoundsCapExhausts) {
  auto s = small_setup(SplitSpec{20, 25, {10, 10, 10}, 10});
  ProjectSettings settings;
  settings.policy = {0.95, 2};
  auto p = start(*s, R"({"VALIDATION": 0.5})", settings);
  testing::run_to_completion(*p);
  EXPECT_EQ(p->validation_history().size(), 2u);
  EXPECT_EQ(p->last_decision(), StopDecision::kStopExhausted);
  EXPECT_EQ(p->phase(), Phase::kExhausted);
  EXPECT_FALSE(p->evaluation_metrics());
}

TEST(ReferenceRun, ValidationAccuraciesAndPublishedMatrix) {
  const auto f = testing::reference_fixture();
  TempDir tmp;
  ProjectDir dir(tmp / "reference");
  testing::seed_project(dir, f.records);
  auto p = Project::start(
      dir, {}, f.plan,
      script_from(R"({"seed": 21, "rounds": {"SUPERVISED": 0.2, "VALIDATION": [0.33, 0.07], "EVALUATION": {"fp": 5, "fn": 2}}})"));
  testing::run_to_completion(*p);
  const auto h = p->validation_history();
  ASSERT_EQ(h.size(), 2u);
  EXPECT_DOUBLE_EQ(h[0], 0.67);
  EXPECT_DOUBLE_EQ(h[1], 94.0 / 101.0);
  EXPECT_EQ(p->last_decision(), StopDecision::kStopSuccess);
  ASSERT_TRUE(p->evaluation_metrics());
  EXPECT_EQ(p->evaluation_metrics()->counts, (ConfusionMatrix{37, 5, 2, 58}));
  for (const auto& r : p->rounds()) {
    if (r.phase == Phase::kSupervised) EXPECT_DOUBLE_EQ(*r.accuracy, 0.8);
  }
  EXPECT_TRUE(check_unseen_invariant(p->events().all(), p->dataset(), p->plan(), p->scheme()).empty());
}

TEST(Reopen, StateIsRebuiltFromTheLog) {
  auto s = small_setup(SplitSpec{20, 50, {20, 20}, 10});
  nlohmann::json before;
  {
    auto p = start(*s, R"({"SUPERVISED": 0.2, "VALIDATION": [0.5, 0.1]})");
    p->run_pretraining();
    const auto r = p->run_supervised_batch();
    p->submit_corrections(r.round_id, gold_corrections(*p, r));
    p->run_supervised_batch();
    before = p->status_json();
  }
  auto p = Project::open(s->dir);
  EXPECT_EQ(p->status_json(), before);
  ASSERT_TRUE(p->current_round());
  const auto r = p->current_round()->round_id;
  EXPECT_EQ(r, "supervised-2");
  p->submit_corrections(r, gold_corrections(*p, *p->current_round()));
  p->run_validation_round();
  const auto last = p->run_validation_round();
  EXPECT_DOUBLE_EQ(*last.accuracy, 0.9);
  EXPECT_EQ(p->phase(), Phase::kEvaluation);

  // Reopened session history contains every earlier turn.
  std::size_t prompts = 0;
  for (const auto& e : p->events().all()) prompts += e.type == "prompt";
  EXPECT_EQ(prompts, 9u);
}

class FailingBackend : public ChatBackend {
 public:
  std::string complete(const std::vector<Turn>&, const PromptDoc&) override {
    fail(ErrorCode::kUnavailable, "backend down");
  }
};

TEST(Reopen, FailedDispatchLeavesNoTrace) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  { start(*s); }
  OpenOptions opts;
  opts.session_factory = [](const std::string& id) {
    return std::make_unique<Session>(id, BackendKind::kScripted, std::make_unique<FailingBackend>(), 180000);
  };
  auto p = Project::open(s->dir, opts);
  const auto seq = p->events().last_seq();
  EXPECT_EQ(code_of([&] { p->run_pretraining(); }), ErrorCode::kUnavailable);
  EXPECT_EQ(p->events().last_seq(), seq);
  EXPECT_EQ(p->phase(), Phase::kPretraining);
}

TEST(Sessions, PerPhaseModeUsesPreamble) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  ProjectSettings settings;
  settings.session_mode = SessionMode::kPerPhase;
  auto p = start(*s, R"({"VALIDATION": 0.0})", settings);
  testing::run_to_completion(*p);
  std::vector<std::string> opened;
  std::vector<std::size_t> preamble;
  std::set<std::string> sessions;
  for (const auto& e : p->events().all()) {
    if (e.type == "session_opened") {
      opened.push_back(e.data["session"]);
      preamble.push_back(e.data["preamble_turns"].size());
    }
    if (e.type == "prompt") sessions.insert(e.data["session"].get<std::string>());
  }
  EXPECT_EQ(opened, (std::vector<std::string>{"phase-supervised", "phase-validation", "phase-evaluation"}));
  // pretraining; + feedback; + validation summary
  EXPECT_EQ(preamble, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(sessions, (std::set<std::string>{"phase-pretraining", "phase-supervised", "phase-validation",
                                             "phase-evaluation"}));
}

TEST(Sessions, SmallBudgetIsReportedAndNothingIsLogged) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  ProjectSettings settings;
  settings.context_budget = 2000;
  auto p = start(*s, "{}", settings);
  EXPECT_EQ(code_of([&] { p->run_pretraining(); }), ErrorCode::kBudgetExceeded);
  EXPECT_EQ(p->events().all().size(), 1u);
}

TEST(UnseenInvariant, DetectsPlantedViolations) {
  auto s = small_setup(SplitSpec{20, 25, {20}, 10});
  auto p = start(*s);
  testing::run_to_completion(*p);
  auto events = p->events().all();
  ASSERT_TRUE(check_unseen_invariant(events, p->dataset(), p->plan(), p->scheme()).empty());

  // Re-render the evaluation item of a batch prompt as a labeled example.
  const auto& eval = p->dataset().at(p->plan().evaluation_ids[0]);
  for (auto& e : events) {
    if (e.type == "prompt" && e.data["kind"] == "BATCH") {
      std::string rendered = e.data["rendered"];
      const auto pos = rendered.find("</examples>");
      rendered.insert(pos, "<example>Sentence: " + marked_sentence(eval) + "\nLabel: EVALUATIVE</example>\n");
      e.data["rendered"] = rendered;
      break;
    }
  }
  EXPECT_FALSE(check_unseen_invariant(events, p->dataset(), p->plan(), p->scheme()).empty());

  // Duplicate a batch prompt.
  auto dup = p->events().all();
  for (const auto& e : p->events().all()) {
    if (e.type == "prompt" && e.data["round_id"] == "validation-1") {
      auto copy = e;
      copy.data["round_id"] = "validation-9";
      dup.push_back(copy);
      break;
    }
  }
  const auto v = check_unseen_invariant(dup, p->dataset(), p->plan(), p->scheme());
  ASSERT_FALSE(v.empty());
  EXPECT_NE(v.front().find("rendered again"), std::string::npos);
}

// Property: randomized plans, schedules and session modes never render an
// item twice or leak evaluation labels before evaluation completes.
TEST(UnseenInvariant, RandomizedRuns) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    SplitSpec spec{5 + rng() % 30, 1 + rng() % 60, {}, 1 + rng() % 30};
    const auto rounds = 1 + rng() % 3;
    for (std::size_t i = 0; i < rounds; ++i) spec.validation.push_back(1 + rng() % 30);
    auto s = small_setup(spec, rng());
    ProjectSettings settings;
    settings.session_mode = rng() % 2 ? SessionMode::kPerPhase : SessionMode::kSingle;
    settings.forge.batch_max = 5 + rng() % 21;
    settings.forge.batch_min = 1;
    char script[160];
    std::snprintf(script, sizeof script,
                  R"({"SUPERVISED": %.2f, "VALIDATION": [%.2f, %.2f], "EVALUATION": {"error_rate": %.2f, "abstain": %d}})",
                  (rng() % 40) / 100.0, (rng() % 60) / 100.0, (rng() % 20) / 100.0, (rng() % 30) / 100.0,
                  static_cast<int>(rng() % 2));
    auto p = start(*s, script, settings);
    testing::run_to_completion(*p);
    const auto v = check_unseen_invariant(p->events().all(), p->dataset(), p->plan(), p->scheme());
    EXPECT_TRUE(v.empty()) << (v.empty() ? "" : v.front());
    EXPECT_TRUE(p->phase() == Phase::kDone || p->phase() == Phase::kExhausted);
  }
}

}  // namespace
}  // namespace annot
