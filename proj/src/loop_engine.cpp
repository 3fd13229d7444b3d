#include "annot/loop_engine.hpp"

#include <algorithm>
#include <ctime>
#include <map>

#include "annot/error.hpp"
#include "annot/text.hpp"

namespace annot {

using nlohmann::json;

namespace {

constexpr Phase kAllPhases[] = {Phase::kPretraining, Phase::kSupervised, Phase::kValidation,
                                Phase::kEvaluation,  Phase::kDone,       Phase::kExhausted};

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kPretraining: return "PRETRAINING";
    case Phase::kSupervised: return "SUPERVISED";
    case Phase::kValidation: return "VALIDATION";
    case Phase::kEvaluation: return "EVALUATION";
    case Phase::kDone: return "DONE";
    case Phase::kExhausted: return "EXHAUSTED";
  }
  return "?";
}

std::optional<Phase> parse_phase(std::string_view s) {
  for (auto p : kAllPhases) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

std::string_view to_string(RoundStatus s) {
  switch (s) {
    case RoundStatus::kPending: return "PENDING";
    case RoundStatus::kAwaitingReview: return "AWAITING_REVIEW";
    case RoundStatus::kClosed: return "CLOSED";
  }
  return "?";
}

std::optional<RoundStatus> parse_round_status(std::string_view s) {
  for (auto r : {RoundStatus::kPending, RoundStatus::kAwaitingReview, RoundStatus::kClosed}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

std::string_view to_string(StopDecision d) {
  switch (d) {
    case StopDecision::kContinue: return "CONTINUE";
    case StopDecision::kStopSuccess: return "STOP_SUCCESS";
    case StopDecision::kStopExhausted: return "STOP_EXHAUSTED";
  }
  return "?";
}

std::optional<StopDecision> parse_stop_decision(std::string_view s) {
  for (auto d : {StopDecision::kContinue, StopDecision::kStopSuccess, StopDecision::kStopExhausted}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

std::string_view to_string(SessionMode m) { return m == SessionMode::kSingle ? "single" : "per_phase"; }

std::optional<SessionMode> parse_session_mode(std::string_view s) {
  const auto l = to_lower(s);
  if (l == "single") return SessionMode::kSingle;
  if (l == "per_phase" || l == "per-phase") return SessionMode::kPerPhase;
  return std::nullopt;
}

void StoppingPolicy::validate() const {
  if (!(target_accuracy > 0.0 && target_accuracy <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "target_accuracy must lie in (0, 1]");
  }
  if (max_rounds < 1) fail(ErrorCode::kInvalidArgument, "max_rounds must be at least 1");
}

json StoppingPolicy::to_json() const {
  return {{"target_accuracy", target_accuracy}, {"max_rounds", max_rounds}};
}

StoppingPolicy StoppingPolicy::from_json(const json& j) {
  StoppingPolicy p;
  p.target_accuracy = j.value("target_accuracy", p.target_accuracy);
  p.max_rounds = j.value("max_rounds", p.max_rounds);
  return p;
}

StopDecision should_stop(const std::vector<double>& history, const StoppingPolicy& policy) {
  if (history.empty()) return StopDecision::kContinue;
  if (history.back() >= policy.target_accuracy) return StopDecision::kStopSuccess;
  if (history.size() >= policy.max_rounds) return StopDecision::kStopExhausted;
  return StopDecision::kContinue;
}

json ProjectSettings::to_json() const {
  return {{"project_id", project_id},
          {"task_brief", task_brief},
          {"batch_min", forge.batch_min},
          {"batch_max", forge.batch_max},
          {"few_shot", forge.few_shot},
          {"summary_examples", forge.summary_examples},
          {"policy", policy.to_json()},
          {"session_mode", to_string(session_mode)},
          {"backend", to_string(backend)},
          {"remote",
           {{"url", remote.url},
            {"model", remote.model},
            {"api_key_env", remote.api_key_env},
            {"system_prompt", remote.system_prompt},
            {"max_tokens", remote.max_tokens},
            {"timeout_s", remote.timeout.count()}}},
          {"context_budget", context_budget},
          {"split", split.to_json()},
          {"seed", seed},
          {"created", created}};
}

ProjectSettings ProjectSettings::from_json(const json& j) {
  ProjectSettings s;
  try {
    s.project_id = j.value("project_id", std::string{});
    s.task_brief = j.value("task_brief", s.task_brief);
    s.forge.batch_min = j.value("batch_min", s.forge.batch_min);
    s.forge.batch_max = j.value("batch_max", s.forge.batch_max);
    s.forge.few_shot = j.value("few_shot", s.forge.few_shot);
    s.forge.summary_examples = j.value("summary_examples", s.forge.summary_examples);
    if (j.contains("policy")) s.policy = StoppingPolicy::from_json(j["policy"]);
    s.forge.target_accuracy = s.policy.target_accuracy;
    if (auto m = parse_session_mode(j.value("session_mode", std::string("single")))) s.session_mode = *m;
    else fail(ErrorCode::kInvalidArgument, "unknown session_mode");
    if (auto b = parse_backend_kind(j.value("backend", std::string("SCRIPTED")))) s.backend = *b;
    else fail(ErrorCode::kInvalidArgument, "unknown backend kind");
    if (j.contains("remote")) {
      const auto& r = j["remote"];
      s.remote.url = r.value("url", std::string{});
      s.remote.model = r.value("model", std::string{});
      s.remote.api_key_env = r.value("api_key_env", s.remote.api_key_env);
      s.remote.system_prompt = r.value("system_prompt", std::string{});
      s.remote.max_tokens = r.value("max_tokens", s.remote.max_tokens);
      s.remote.timeout = std::chrono::seconds(r.value("timeout_s", std::int64_t{300}));
    }
    s.context_budget = j.value("context_budget", s.context_budget);
    if (j.contains("split")) s.split = SplitSpec::from_json(j["split"]);
    s.seed = j.value("seed", std::uint64_t{0});
    s.created = j.value("created", std::string{});
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed project settings: ") + e.what());
  }
  return s;
}

json RoundState::to_json(const LabelScheme& scheme) const {
  json c = json::array();
  for (const auto& n : corrections) c.push_back(n.to_json(scheme));
  json j = {{"round_id", round_id},
            {"phase", to_string(phase)},
            {"ordinal", ordinal},
            {"status", to_string(status)},
            {"item_ids", item_ids},
            {"predictions", predictions.to_json(scheme)},
            {"corrections", c},
            {"guidelines", guidelines},
            {"accuracy", accuracy ? json(*accuracy) : json(nullptr)},
            {"metrics", metrics ? metrics->to_json() : json(nullptr)}};
  return j;
}

struct Project::State {
  Phase phase = Phase::kPretraining;
  std::vector<RoundState> rounds;
  std::vector<double> validation_accuracies;
  std::optional<StopDecision> decision;
  std::optional<MetricsReport> evaluation;
  std::map<std::uint64_t, Turn> turns;  // answered prompts by turn number
  std::map<std::uint64_t, std::string> turn_session;
  std::map<std::uint64_t, Turn> pending;
  std::map<std::string, std::vector<std::uint64_t>> sessions;  // session id -> turn numbers
  std::uint64_t next_turn = 1;

  RoundState* find(const std::string& id) {
    for (auto& r : rounds) {
      if (r.round_id == id) return &r;
    }
    return nullptr;
  }
  int count_rounds(Phase p) const {
    return static_cast<int>(std::count_if(rounds.begin(), rounds.end(), [&](const auto& r) { return r.phase == p; }));
  }
};

struct Project::Txn {
  std::vector<std::pair<std::string, json>> events;
  std::uint64_t next_turn = 0;
  bool session_opened = false;

  void add(std::string type, json data) { events.emplace_back(std::move(type), std::move(data)); }
};

Project::Project(ProjectDir dir, OpenOptions options)
    : dir_(std::move(dir)),
      options_(std::move(options)),
      forge_(LabelScheme::consider_default()),
      state_(std::make_unique<State>()) {}

Project::~Project() = default;

std::unique_ptr<Project> Project::start(const ProjectDir& dir, ProjectSettings settings, const SplitPlan& plan,
                                        std::optional<OracleScript> script, OpenOptions options) {
  {
    ProjectLock lock(dir);
    if (dir.started()) fail(ErrorCode::kConflict, "project already started: " + dir.root().string());
    const auto scheme = dir.load_scheme();
    const auto dataset = dir.load_records(scheme);
    if (dataset.size() == 0) fail(ErrorCode::kInvalidArgument, "no records imported into " + dir.root().string());
    settings.policy.validate();
    plan.validate(dataset);
    settings.forge.target_accuracy = settings.policy.target_accuracy;
    PromptForge check(scheme, settings.forge);  // validates batch bounds
    settings.split = plan.sizes();
    if (settings.project_id.empty()) settings.project_id = dir.root().filename().string();
    if (settings.backend == BackendKind::kScripted && !script) {
      fail(ErrorCode::kConfiguration, "scripted backend requires an oracle script");
    }
    if (settings.backend == BackendKind::kRemote && settings.remote.url.empty()) {
      fail(ErrorCode::kConfiguration, "remote backend requires an endpoint URL");
    }
    if (settings.created.empty()) {
      const std::time_t now = std::time(nullptr);
      std::tm tm{};
      gmtime_r(&now, &tm);
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
      settings.created = buf;
    }
    if (!std::filesystem::exists(dir.scheme_path())) dir.save_scheme(scheme);
    write_json_file(dir.plan_path(), plan.to_json());
    if (script) write_json_file(dir.script_path(), script->to_json(scheme));
    std::filesystem::remove(dir.events_path());
    EventLog log(dir.events_path());
    log.append("project_started", {{"project_id", settings.project_id}});
    write_json_file(dir.descriptor_path(), settings.to_json());
  }
  return open(dir, std::move(options));
}

std::unique_ptr<Project> Project::open(const ProjectDir& dir, OpenOptions options) {
  if (!dir.exists()) fail(ErrorCode::kNotFound, "no project at " + dir.root().string());
  if (!dir.started()) fail(ErrorCode::kConflict, "project not started: " + dir.root().string());
  std::unique_ptr<Project> p(new Project(dir, std::move(options)));
  p->file_lock_ = std::make_unique<ProjectLock>(p->dir_);
  p->load();
  return p;
}

void Project::load() {
  settings_ = ProjectSettings::from_json(read_json_file(dir_.descriptor_path()));
  scheme_ = dir_.load_scheme();
  dataset_ = dir_.load_records(scheme_);
  plan_ = SplitPlan::from_json(read_json_file(dir_.plan_path()));
  if (std::filesystem::exists(dir_.script_path())) {
    script_ = OracleScript::from_json(read_json_file(dir_.script_path()), scheme_);
    for (const auto& r : dataset_.records()) {
      if (r.gold_label && !script_->gold.count(r.id)) script_->gold[r.id] = *r.gold_label;
    }
  }
  forge_ = PromptForge(scheme_, settings_.forge, TemplateSet::load(dir_.templates_dir()));
  log_ = std::make_unique<EventLog>(dir_.events_path());
  for (const auto& e : log_->all()) apply(e);
}

namespace {

PromptMeta meta_from(const json& d) { return {d.value("phase", std::string{}), d.value("ordinal", 0)}; }

}  // namespace

void Project::apply(const Event& e) {
  auto& s = *state_;
  const auto& d = e.data;
  if (e.type == "project_started") {
    s.phase = Phase::kPretraining;
  } else if (e.type == "session_opened") {
    auto& list = s.sessions[d.at("session").get<std::string>()];
    for (const auto& t : d.value("preamble_turns", std::vector<std::uint64_t>{})) list.push_back(t);
  } else if (e.type == "prompt") {
    const auto turn = d.at("turn").get<std::uint64_t>();
    auto kind = parse_prompt_kind(d.at("kind").get<std::string>());
    if (!kind) fail(ErrorCode::kIo, "event log names an unknown prompt kind");
    s.pending[turn] = Turn{*kind, meta_from(d), d.at("rendered").get<std::string>(), {}};
    s.next_turn = std::max(s.next_turn, turn + 1);
  } else if (e.type == "reply") {
    const auto turn = d.at("turn").get<std::uint64_t>();
    auto it = s.pending.find(turn);
    if (it == s.pending.end()) fail(ErrorCode::kIo, "reply without prompt in event log");
    Turn t = std::move(it->second);
    s.pending.erase(it);
    t.reply = d.at("raw").get<std::string>();
    const auto session = d.at("session").get<std::string>();
    s.turns[turn] = std::move(t);
    s.turn_session[turn] = session;
    s.sessions[session].push_back(turn);
  } else if (e.type == "round_opened") {
    RoundState r;
    r.round_id = d.at("round_id").get<std::string>();
    r.phase = parse_phase(d.at("phase").get<std::string>()).value_or(Phase::kSupervised);
    r.ordinal = d.value("ordinal", 0);
    r.item_ids = d.value("item_ids", std::vector<std::string>{});
    s.rounds.push_back(std::move(r));
  } else if (e.type == "predictions") {
    auto* r = s.find(d.at("round_id").get<std::string>());
    if (!r) fail(ErrorCode::kIo, "predictions for unknown round in event log");
    r->predictions = ParsedClassifications::from_json(d.at("parsed"), scheme_);
    if (r->phase == Phase::kSupervised) r->status = RoundStatus::kAwaitingReview;
  } else if (e.type == "corrections") {
    auto* r = s.find(d.at("round_id").get<std::string>());
    if (!r) fail(ErrorCode::kIo, "corrections for unknown round in event log");
    r->corrections.clear();
    for (const auto& c : d.at("corrections")) r->corrections.push_back(CorrectionNote::from_json(c, scheme_));
    r->guidelines = d.value("guidelines", std::string{});
  } else if (e.type == "round_closed") {
    auto* r = s.find(d.at("round_id").get<std::string>());
    if (!r) fail(ErrorCode::kIo, "close of unknown round in event log");
    r->status = RoundStatus::kClosed;
    if (d.contains("accuracy") && !d["accuracy"].is_null()) r->accuracy = d["accuracy"].get<double>();
    if (d.contains("metrics") && !d["metrics"].is_null()) r->metrics = MetricsReport::from_json(d["metrics"]);
    if (d.contains("guidelines")) r->guidelines = d["guidelines"].get<std::string>();
    if (r->phase == Phase::kValidation && r->accuracy) s.validation_accuracies.push_back(*r->accuracy);
  } else if (e.type == "phase_advanced") {
    auto p = parse_phase(d.at("to").get<std::string>());
    if (!p) fail(ErrorCode::kIo, "event log names an unknown phase");
    s.phase = *p;
  } else if (e.type == "stop_decision") {
    s.decision = parse_stop_decision(d.at("decision").get<std::string>());
  } else if (e.type == "evaluation_completed") {
    s.evaluation = MetricsReport::from_json(d.at("metrics"));
  }
}

void Project::commit(Txn& txn) {
  for (auto& [type, data] : txn.events) {
    const auto e = log_->append(type, std::move(data));
    std::lock_guard lock(state_mu_);
    apply(e);
  }
  txn.events.clear();
}

std::unique_lock<std::mutex> Project::lock_op() {
  std::unique_lock lock(op_mu_, std::try_to_lock);
  if (!lock.owns_lock()) fail(ErrorCode::kConflict, "project busy: another operation is in progress");
  return lock;
}

std::string Project::session_id_for(Phase phase) const {
  if (settings_.session_mode == SessionMode::kSingle) return "main";
  return "phase-" + to_lower(to_string(phase));
}

Session& Project::live_session(Txn& txn) {
  const std::string id = session_id_for(state_->phase);
  if (session_ && session_->id() == id) return *session_;
  session_.reset();

  std::unique_ptr<Session> s;
  if (options_.session_factory) {
    s = options_.session_factory(id);
  } else {
    SessionConfig cfg;
    cfg.kind = settings_.backend;
    cfg.session_id = id;
    cfg.remote = settings_.remote;
    if (options_.retry) cfg.remote.retry = *options_.retry;
    cfg.script = script_;
    cfg.scheme = scheme_;
    cfg.context_budget = settings_.context_budget;
    s = open_session(cfg);
  }

  std::vector<std::uint64_t> turns;
  auto known = state_->sessions.find(id);
  if (known != state_->sessions.end()) {
    turns = known->second;
  } else if (!state_->turns.empty()) {
    // A fresh phase session starts from the pretraining exchange and every
    // feedback turn given so far.
    for (const auto& [n, t] : state_->turns) {
      if (t.kind == PromptKind::kPretraining || t.kind == PromptKind::kFeedback || t.kind == PromptKind::kSummary) {
        turns.push_back(n);
      }
    }
    txn.add("session_opened", {{"session", id}, {"preamble_turns", turns}});
    txn.session_opened = true;
  }
  for (auto n : turns) s->restore(state_->turns.at(n));
  session_ = std::move(s);
  return *session_;
}

std::string Project::dispatch(Txn& txn, const PromptDoc& doc, const std::string& round_id) {
  if (txn.next_turn == 0) txn.next_turn = state_->next_turn;
  Session& session = live_session(txn);
  const auto turn = txn.next_turn++;
  json prompt = {{"turn", turn},
                 {"session", session.id()},
                 {"kind", to_string(doc.kind)},
                 {"phase", doc.meta.phase},
                 {"ordinal", doc.meta.round},
                 {"round_id", round_id},
                 {"item_ids", doc.item_ids()},
                 {"rendered", doc.rendered}};
  std::string reply = session.send(doc);
  txn.add("prompt", std::move(prompt));
  txn.add("reply", {{"turn", turn}, {"session", session.id()}, {"raw", reply}});
  return reply;
}

std::vector<SentenceRecord> Project::records_of(const std::vector<std::string>& ids) const {
  std::vector<SentenceRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(dataset_.at(id));
  return out;
}

std::vector<SentenceRecord> Project::few_shot() const {
  return forge_.select_few_shot(records_of(plan_.pretraining_ids));
}

ParsedClassifications Project::classify_round(Txn& txn, PromptDoc doc, const std::string& round_id,
                                              const std::vector<SentenceRecord>& items) {
  std::vector<std::string> ids;
  for (const auto& r : items) ids.push_back(r.id);
  auto parsed = parse_reply(dispatch(txn, doc, round_id), ids, scheme_);
  if (parsed.unparsed_ids.empty()) return parsed;

  auto reask = forge_.render_reask_prompt(records_of(parsed.unparsed_ids), few_shot());
  reask.meta = doc.meta;
  auto second = parse_reply(dispatch(txn, reask, round_id), parsed.unparsed_ids, scheme_);

  ParsedClassifications merged;
  for (const auto& id : ids) {
    if (const auto* e = parsed.find(id)) merged.entries.push_back(*e);
    else if (const auto* e2 = second.find(id)) merged.entries.push_back(*e2);
  }
  merged.unparsed_ids = second.unparsed_ids;
  merged.model_comments = parsed.model_comments;
  if (!second.model_comments.empty()) {
    if (!merged.model_comments.empty()) merged.model_comments += "\n\n";
    merged.model_comments += second.model_comments;
  }
  return merged;
}

Phase Project::phase() const {
  std::lock_guard lock(state_mu_);
  return state_->phase;
}

std::vector<RoundState> Project::rounds() const {
  std::lock_guard lock(state_mu_);
  return state_->rounds;
}

RoundState Project::round(const std::string& round_id) const {
  std::lock_guard lock(state_mu_);
  for (const auto& r : state_->rounds) {
    if (r.round_id == round_id) return r;
  }
  fail(ErrorCode::kNotFound, "unknown round '" + round_id + "'");
}

std::optional<RoundState> Project::current_round() const {
  std::lock_guard lock(state_mu_);
  for (const auto& r : state_->rounds) {
    if (r.status == RoundStatus::kAwaitingReview) return r;
  }
  return std::nullopt;
}

std::vector<double> Project::validation_history() const {
  std::lock_guard lock(state_mu_);
  return state_->validation_accuracies;
}

std::optional<StopDecision> Project::last_decision() const {
  std::lock_guard lock(state_mu_);
  return state_->decision;
}

std::optional<MetricsReport> Project::evaluation_metrics() const {
  std::lock_guard lock(state_mu_);
  return state_->evaluation;
}

std::vector<std::vector<std::string>> Project::supervised_batches() const {
  std::vector<std::vector<std::string>> out;
  const auto& ids = plan_.supervised_ids;
  const std::size_t max = settings_.forge.batch_max;
  for (std::size_t i = 0; i < ids.size(); i += max) {
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                     ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), i + max)));
  }
  return out;
}

json Project::status_json() const {
  std::lock_guard lock(state_mu_);
  const auto& s = *state_;
  json rounds = json::array();
  for (const auto& r : s.rounds) {
    json j = {{"round_id", r.round_id},
              {"phase", to_string(r.phase)},
              {"ordinal", r.ordinal},
              {"status", to_string(r.status)},
              {"items", r.item_ids.size()},
              {"corrections", r.corrections.size()},
              {"abstentions", r.predictions.unparsed_ids.size()},
              {"accuracy", r.accuracy ? json(*r.accuracy) : json(nullptr)}};
    rounds.push_back(std::move(j));
  }
  return {{"project_id", settings_.project_id},
          {"phase", to_string(s.phase)},
          {"backend", to_string(settings_.backend)},
          {"session_mode", to_string(settings_.session_mode)},
          {"policy", settings_.policy.to_json()},
          {"split", plan_.sizes().to_json()},
          {"created", settings_.created},
          {"rounds", rounds},
          {"validation_accuracies", s.validation_accuracies},
          {"stop_decision", s.decision ? json(to_string(*s.decision)) : json(nullptr)},
          {"evaluation", s.evaluation ? s.evaluation->to_json() : json(nullptr)}};
}

namespace {

[[noreturn]] void phase_conflict(const std::string& what, Phase phase) {
  fail(ErrorCode::kConflict, what + " (phase " + std::string(to_string(phase)) + ")");
}

}  // namespace

std::string Project::run_pretraining() {
  auto op = lock_op();
  if (state_->phase != Phase::kPretraining) phase_conflict("pretraining already done", state_->phase);
  Txn txn;
  try {
    auto doc = forge_.render_pretraining_prompt(settings_.task_brief, records_of(plan_.pretraining_ids));
    doc.meta = {"PRETRAINING", 1};
    txn.add("round_opened", {{"round_id", "pretraining"},
                             {"phase", "PRETRAINING"},
                             {"ordinal", 1},
                             {"item_ids", plan_.pretraining_ids}});
    const std::string comments = trim(dispatch(txn, doc, "pretraining"));
    ParsedClassifications parsed;
    parsed.model_comments = comments;
    txn.add("predictions", {{"round_id", "pretraining"}, {"parsed", parsed.to_json(scheme_)}});
    txn.add("round_closed", {{"round_id", "pretraining"}, {"accuracy", nullptr}});
    const Phase next = plan_.supervised_ids.empty() ? Phase::kValidation : Phase::kSupervised;
    txn.add("phase_advanced", {{"from", "PRETRAINING"}, {"to", to_string(next)}});
    commit(txn);
    return comments;
  } catch (...) {
    session_.reset();
    throw;
  }
}

RoundState Project::run_supervised_batch() {
  auto op = lock_op();
  if (state_->phase != Phase::kSupervised) phase_conflict("supervised phase not active", state_->phase);
  for (const auto& r : state_->rounds) {
    if (r.status == RoundStatus::kAwaitingReview) {
      fail(ErrorCode::kConflict, "round awaiting review: " + r.round_id);
    }
  }
  const auto batches = supervised_batches();
  const int k = state_->count_rounds(Phase::kSupervised);
  if (static_cast<std::size_t>(k) >= batches.size()) fail(ErrorCode::kConflict, "supervised split exhausted");
  const auto& ids = batches[k];
  const std::string round_id = "supervised-" + std::to_string(k + 1);
  Txn txn;
  try {
    const auto items = records_of(ids);
    auto doc = forge_.render_batch_prompt(items, few_shot());
    doc.meta = {"SUPERVISED", k + 1};
    txn.add("round_opened", {{"round_id", round_id}, {"phase", "SUPERVISED"}, {"ordinal", k + 1}, {"item_ids", ids}});
    auto parsed = classify_round(txn, std::move(doc), round_id, items);
    txn.add("predictions", {{"round_id", round_id}, {"parsed", parsed.to_json(scheme_)}});
    commit(txn);
  } catch (...) {
    session_.reset();
    throw;
  }
  return round(round_id);
}

std::vector<CorrectionNote> Project::corrections_from_json(const std::string& round_id, const json& j) const {
  const auto r = round(round_id);
  if (!j.is_array()) fail(ErrorCode::kUnprocessable, "corrections must be a JSON array");
  std::vector<CorrectionNote> out;
  for (const auto& c : j) {
    if (!c.is_object() || !c.contains("id") || !c["id"].is_string()) {
      fail(ErrorCode::kUnprocessable, "correction without string id");
    }
    json full = c;
    if (!full.contains("model_answer")) {
      const auto* e = r.predictions.find(c["id"].get<std::string>());
      if (!e) fail(ErrorCode::kUnprocessable, "no model answer to correct for '" + c["id"].get<std::string>() + "'");
      full["model_answer"] = scheme_.name_of(e->answer);
    }
    out.push_back(CorrectionNote::from_json(full, scheme_));
  }
  return out;
}

RoundState Project::submit_corrections(const std::string& round_id, const std::vector<CorrectionNote>& corrections,
                                       const std::string& extra_guidelines) {
  auto op = lock_op();
  RoundState* r = state_->find(round_id);
  if (!r) fail(ErrorCode::kNotFound, "unknown round '" + round_id + "'");
  if (r->phase != Phase::kSupervised) fail(ErrorCode::kConflict, "round " + round_id + " takes no corrections");
  if (r->status != RoundStatus::kAwaitingReview) {
    fail(ErrorCode::kConflict, "round " + round_id + " is not awaiting review");
  }
  const std::set<std::string> in_round(r->item_ids.begin(), r->item_ids.end());
  std::set<std::string> seen;
  for (const auto& c : corrections) {
    if (!in_round.count(c.record_id())) {
      fail(ErrorCode::kUnprocessable, "correction for '" + c.record_id() + "' which is not in round " + round_id);
    }
    if (!seen.insert(c.record_id()).second) {
      fail(ErrorCode::kUnprocessable, "duplicate correction for '" + c.record_id() + "'");
    }
    const auto* e = r->predictions.find(c.record_id());
    if (!e) fail(ErrorCode::kUnprocessable, "no model answer to correct for '" + c.record_id() + "'");
    if (e->answer != c.model_answer()) {
      fail(ErrorCode::kUnprocessable, "correction for '" + c.record_id() + "' contradicts the stored answer " +
                                          scheme_.name_of(e->answer));
    }
  }
  const double n = static_cast<double>(r->item_ids.size());
  const double wrong = static_cast<double>(corrections.size() + r->predictions.unparsed_ids.size());
  const double accuracy = (n - wrong) / n;
  const int ordinal = r->ordinal;

  Txn txn;
  try {
    auto doc = forge_.render_feedback_prompt(corrections, extra_guidelines);
    doc.meta = {"SUPERVISED", ordinal};
    dispatch(txn, doc, round_id);
    json notes = json::array();
    for (const auto& c : corrections) notes.push_back(c.to_json(scheme_));
    txn.add("corrections", {{"round_id", round_id}, {"corrections", notes}, {"guidelines", extra_guidelines}});
    txn.add("round_closed", {{"round_id", round_id}, {"accuracy", accuracy}});
    if (static_cast<std::size_t>(ordinal) == supervised_batches().size()) {
      txn.add("phase_advanced", {{"from", "SUPERVISED"}, {"to", "VALIDATION"}});
    }
    commit(txn);
  } catch (...) {
    session_.reset();
    throw;
  }
  return round(round_id);
}

namespace {

struct Scored {
  MetricsReport metrics;
  std::vector<Misclassification> misclassified;
  std::size_t correct = 0;
};

Scored score_round(const std::vector<SentenceRecord>& items, const ParsedClassifications& parsed) {
  std::map<std::string, Label> predictions;
  std::map<std::string, Label> gold;
  Scored out;
  for (const auto& e : parsed.entries) predictions[e.record_id] = e.answer;
  for (const auto& r : items) {
    gold[r.id] = *r.gold_label;
    auto it = predictions.find(r.id);
    if (it == predictions.end()) out.misclassified.push_back({&r, Label::kNegative, true});
    else if (it->second != *r.gold_label) out.misclassified.push_back({&r, it->second, false});
    else ++out.correct;
  }
  out.metrics = score(confusion(predictions, gold));
  return out;
}

}  // namespace

RoundState Project::run_validation_round(const std::string& extra_guidelines) {
  auto op = lock_op();
  if (state_->phase != Phase::kValidation) {
    if (state_->phase == Phase::kPretraining || state_->phase == Phase::kSupervised) {
      phase_conflict("supervised phase not finished", state_->phase);
    }
    phase_conflict("validation phase is over", state_->phase);
  }
  const int k = state_->count_rounds(Phase::kValidation);
  if (static_cast<std::size_t>(k) >= plan_.validation_round_ids.size()) {
    fail(ErrorCode::kConflict, "no validation rounds remaining");
  }
  const auto& ids = plan_.validation_round_ids[k];
  const std::string round_id = "validation-" + std::to_string(k + 1);
  Txn txn;
  try {
    const auto items = records_of(ids);
    auto doc = forge_.render_batch_prompt(items, few_shot(), items.size());
    doc.meta = {"VALIDATION", k + 1};
    txn.add("round_opened", {{"round_id", round_id}, {"phase", "VALIDATION"}, {"ordinal", k + 1}, {"item_ids", ids}});
    auto parsed = classify_round(txn, std::move(doc), round_id, items);
    const auto scored = score_round(items, parsed);

    auto summary = forge_.render_summary_prompt(scored.correct, items.size(), scored.misclassified, extra_guidelines);
    summary.meta = {"VALIDATION", k + 1};
    dispatch(txn, summary, round_id);

    auto history = state_->validation_accuracies;
    history.push_back(scored.metrics.accuracy);
    auto decision = should_stop(history, settings_.policy);
    if (decision == StopDecision::kContinue && static_cast<std::size_t>(k + 1) >= plan_.validation_round_ids.size()) {
      decision = StopDecision::kStopExhausted;
    }
    txn.add("predictions", {{"round_id", round_id}, {"parsed", parsed.to_json(scheme_)}});
    txn.add("round_closed", {{"round_id", round_id},
                             {"accuracy", scored.metrics.accuracy},
                             {"metrics", scored.metrics.to_json()},
                             {"guidelines", extra_guidelines}});
    txn.add("stop_decision", {{"round_id", round_id}, {"decision", to_string(decision)}, {"history", history}});
    if (decision == StopDecision::kStopSuccess) {
      txn.add("phase_advanced", {{"from", "VALIDATION"}, {"to", "EVALUATION"}});
    } else if (decision == StopDecision::kStopExhausted) {
      txn.add("phase_advanced", {{"from", "VALIDATION"}, {"to", "EXHAUSTED"}});
    }
    commit(txn);
  } catch (...) {
    session_.reset();
    throw;
  }
  return round(round_id);
}

MetricsReport Project::run_blind_evaluation() {
  auto op = lock_op();
  if (state_->phase == Phase::kDone) fail(ErrorCode::kConflict, "evaluation already run");
  if (state_->phase != Phase::kEvaluation) phase_conflict("stopping condition not met", state_->phase);
  const std::string round_id = "evaluation";
  Scored scored;
  Txn txn;
  try {
    const auto items = records_of(plan_.evaluation_ids);
    auto doc = forge_.render_batch_prompt(items, few_shot(), items.size());
    doc.meta = {"EVALUATION", 1};
    txn.add("round_opened",
            {{"round_id", round_id}, {"phase", "EVALUATION"}, {"ordinal", 1}, {"item_ids", plan_.evaluation_ids}});
    auto parsed = classify_round(txn, std::move(doc), round_id, items);
    txn.add("predictions", {{"round_id", round_id}, {"parsed", parsed.to_json(scheme_)}});
    scored = score_round(items, parsed);
    txn.add("round_closed",
            {{"round_id", round_id}, {"accuracy", scored.metrics.accuracy}, {"metrics", scored.metrics.to_json()}});
    txn.add("evaluation_completed", {{"round_id", round_id}, {"metrics", scored.metrics.to_json()}});
    txn.add("phase_advanced", {{"from", "EVALUATION"}, {"to", "DONE"}});
    commit(txn);
  } catch (...) {
    session_.reset();
    throw;
  }
  return scored.metrics;
}

std::vector<std::string> check_unseen_invariant(const std::vector<Event>& events, const Dataset& dataset,
                                                const SplitPlan& plan, const LabelScheme& scheme) {
  std::vector<std::string> violations;
  std::map<std::string, std::string> batch_round;  // id -> round of its BATCH prompt
  std::set<std::string> eval_ids(plan.evaluation_ids.begin(), plan.evaluation_ids.end());
  std::vector<std::string> eval_sentences;
  for (const auto& id : plan.evaluation_ids) {
    if (const auto* r = dataset.find(id)) eval_sentences.push_back(marked_sentence(*r));
  }
  bool evaluation_done = false;
  std::set<std::uint64_t> answered;
  for (const auto& e : events) {
    if (e.type == "reply") answered.insert(e.data.value("turn", std::uint64_t{0}));
  }

  for (const auto& e : events) {
    if (e.type == "evaluation_completed") evaluation_done = true;
    if (e.type == "corrections" && !evaluation_done) {
      for (const auto& c : e.data.value("corrections", json::array())) {
        if (eval_ids.count(c.value("id", std::string{}))) {
          violations.push_back("correction references evaluation item " + c.value("id", std::string{}));
        }
      }
    }
    if (e.type != "prompt" || !answered.count(e.data.value("turn", std::uint64_t{0}))) continue;
    const auto kind = parse_prompt_kind(e.data.value("kind", std::string{}));
    const auto round_id = e.data.value("round_id", std::string{});
    const auto rendered = e.data.value("rendered", std::string{});
    const auto doc = parse_prompt(kind.value_or(PromptKind::kBatch), rendered);

    if (kind == PromptKind::kBatch || kind == PromptKind::kReask) {
      for (const auto& id : doc.item_ids()) {
        auto [it, inserted] = batch_round.emplace(id, round_id);
        if (kind == PromptKind::kBatch && !inserted) {
          violations.push_back("item " + id + " rendered again in round " + round_id + " (first in " + it->second + ")");
        }
        if (kind == PromptKind::kReask && it->second != round_id) {
          violations.push_back("re-ask of item " + id + " outside its round " + it->second);
        }
      }
      for (const auto& s : doc.sections) {
        if (s.tag != BlockTag::kItems) continue;
        for (const auto& item : s.children) {
          if (item.body.find(scheme.positive_name) != std::string::npos ||
              item.body.find(scheme.negative_name) != std::string::npos) {
            violations.push_back("label text inside item " + item.id);
          }
        }
      }
    }
    if (evaluation_done) continue;
    // Evaluation items may only appear as unlabeled items, never in examples or feedback.
    std::function<void(const std::vector<Block>&)> scan = [&](const std::vector<Block>& blocks) {
      for (const auto& b : blocks) {
        if (b.tag == BlockTag::kExample || b.tag == BlockTag::kFeedback) {
          if (eval_ids.count(b.id)) violations.push_back("evaluation item " + b.id + " in a labeled block");
          for (const auto& s : eval_sentences) {
            if (b.body.find(s) != std::string::npos) {
              violations.push_back("evaluation sentence inside a labeled block of turn " +
                                   std::to_string(e.data.value("turn", 0)));
            }
          }
        }
        scan(b.children);
      }
    };
    scan(doc.sections);
  }
  return violations;
}

}  // namespace annot
