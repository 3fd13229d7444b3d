#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/corpus_store.hpp"
#include "annot/event_log.hpp"
#include "annot/metrics.hpp"
#include "annot/model_gateway.hpp"
#include "annot/prompt_forge.hpp"

namespace annot {

enum class Phase { kPretraining, kSupervised, kValidation, kEvaluation, kDone, kExhausted };

std::string_view to_string(Phase p);
std::optional<Phase> parse_phase(std::string_view s);

enum class RoundStatus { kPending, kAwaitingReview, kClosed };

std::string_view to_string(RoundStatus s);
std::optional<RoundStatus> parse_round_status(std::string_view s);

enum class StopDecision { kContinue, kStopSuccess, kStopExhausted };

std::string_view to_string(StopDecision d);
std::optional<StopDecision> parse_stop_decision(std::string_view s);

struct StoppingPolicy {
  double target_accuracy = 0.90;
  std::size_t max_rounds = 10;

  /// Throws kInvalidArgument unless 0 < target <= 1 and max_rounds >= 1.
  void validate() const;
  nlohmann::json to_json() const;
  static StoppingPolicy from_json(const nlohmann::json& j);
};

/// CONTINUE on empty history; STOP_SUCCESS when the latest accuracy reaches
/// the target; STOP_EXHAUSTED once max_rounds rounds have run.
StopDecision should_stop(const std::vector<double>& history, const StoppingPolicy& policy);

enum class SessionMode { kSingle, kPerPhase };

std::string_view to_string(SessionMode m);
std::optional<SessionMode> parse_session_mode(std::string_view s);

/// Everything fixed when a project starts.
struct ProjectSettings {
  std::string project_id;
  std::string task_brief =
      "Classify sentences containing the verb consider by whether they express an evaluation.";
  ForgeConfig forge;
  StoppingPolicy policy;
  SessionMode session_mode = SessionMode::kSingle;
  BackendKind backend = BackendKind::kScripted;
  RemoteConfig remote;  // credential is read from the environment, never stored
  std::size_t context_budget = 180'000;
  SplitSpec split;
  std::uint64_t seed = 0;
  std::string created;  // ISO-8601 UTC, informational

  nlohmann::json to_json() const;
  static ProjectSettings from_json(const nlohmann::json& j);
};

struct RoundState {
  std::string round_id;
  Phase phase = Phase::kSupervised;
  int ordinal = 0;
  std::vector<std::string> item_ids;
  ParsedClassifications predictions;
  std::vector<CorrectionNote> corrections;
  std::string guidelines;
  std::optional<double> accuracy;
  std::optional<MetricsReport> metrics;
  RoundStatus status = RoundStatus::kPending;

  nlohmann::json to_json(const LabelScheme& scheme) const;
};

/// Builds a session for `session_id`; used to substitute backends in tests.
using SessionFactory = std::function<std::unique_ptr<Session>(const std::string& session_id)>;

struct OpenOptions {
  SessionFactory session_factory;
  std::optional<RetryPolicy> retry;
};

class Project {
 public:
  /// Starts a project in `dir`, which must hold imported records and no
  /// descriptor yet. Writes descriptor, plan, optional script and the first
  /// event.
  static std::unique_ptr<Project> start(const ProjectDir& dir, ProjectSettings settings, const SplitPlan& plan,
                                        std::optional<OracleScript> script, OpenOptions options = {});
  /// Opens a started project and rebuilds its state from the event log.
  static std::unique_ptr<Project> open(const ProjectDir& dir, OpenOptions options = {});

  ~Project();
  Project(const Project&) = delete;
  Project& operator=(const Project&) = delete;

  const ProjectDir& dir() const { return dir_; }
  const ProjectSettings& settings() const { return settings_; }
  const LabelScheme& scheme() const { return scheme_; }
  const Dataset& dataset() const { return dataset_; }
  const SplitPlan& plan() const { return plan_; }
  const std::optional<OracleScript>& script() const { return script_; }
  const EventLog& events() const { return *log_; }

  Phase phase() const;
  std::vector<RoundState> rounds() const;
  /// Throws kNotFound for an unknown round id.
  RoundState round(const std::string& round_id) const;
  /// The supervised round awaiting review, if any.
  std::optional<RoundState> current_round() const;
  std::vector<double> validation_history() const;
  std::optional<StopDecision> last_decision() const;
  std::optional<MetricsReport> evaluation_metrics() const;
  /// Supervised batch boundaries in plan order.
  std::vector<std::vector<std::string>> supervised_batches() const;
  nlohmann::json status_json() const;

  /// Sends the pretraining prompt; returns the model's comments.
  std::string run_pretraining();
  RoundState run_supervised_batch();
  RoundState submit_corrections(const std::string& round_id, const std::vector<CorrectionNote>& corrections,
                                const std::string& extra_guidelines = {});
  /// Builds notes from JSON objects {id, correct_answer, reason[, model_answer]};
  /// a missing model_answer is taken from the stored parse.
  std::vector<CorrectionNote> corrections_from_json(const std::string& round_id, const nlohmann::json& j) const;
  RoundState run_validation_round(const std::string& extra_guidelines = {});
  MetricsReport run_blind_evaluation();

 private:
  struct State;
  struct Txn;

  Project(ProjectDir dir, OpenOptions options);
  void load();
  void apply(const Event& e);
  void commit(Txn& txn);
  std::string dispatch(Txn& txn, const PromptDoc& doc, const std::string& round_id);
  Session& live_session(Txn& txn);
  ParsedClassifications classify_round(Txn& txn, PromptDoc doc, const std::string& round_id,
                                       const std::vector<SentenceRecord>& items);
  std::vector<SentenceRecord> records_of(const std::vector<std::string>& ids) const;
  std::vector<SentenceRecord> few_shot() const;
  std::unique_lock<std::mutex> lock_op();
  std::string session_id_for(Phase phase) const;

  ProjectDir dir_;
  OpenOptions options_;
  std::unique_ptr<ProjectLock> file_lock_;
  ProjectSettings settings_;
  LabelScheme scheme_;
  Dataset dataset_;
  SplitPlan plan_;
  std::optional<OracleScript> script_;
  PromptForge forge_;
  std::unique_ptr<EventLog> log_;

  std::mutex op_mu_;
  mutable std::mutex state_mu_;
  std::unique_ptr<State> state_;
  std::unique_ptr<Session> session_;
};

/// Checks the unseen-data guarantee over a transcript: no id rendered into
/// two batch prompts (re-ask prompts may only repeat ids of their own round),
/// and no evaluation gold label rendered before evaluation completes.
/// Returns human-readable violations.
std::vector<std::string> check_unseen_invariant(const std::vector<Event>& events, const Dataset& dataset,
                                                const SplitPlan& plan, const LabelScheme& scheme);

}  // namespace annot
