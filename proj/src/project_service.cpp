#include "annot/project_service.hpp"

#include <regex>
#include <sstream>

#include "annot/error.hpp"
#include "annot/transcript.hpp"

namespace annot {

using nlohmann::json;
namespace fs = std::filesystem;

SplitSpec parse_split_spec(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) parts.push_back(trim(part));
  if (parts.size() != 4) {
    fail(ErrorCode::kInvalidArgument, "split must have four comma-separated parts: pretraining,supervised,"
                                      "validation rounds joined by '+',evaluation");
  }
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      fail(ErrorCode::kInvalidArgument, "split size '" + s + "' is not a non-negative integer");
    }
    return std::stoul(s);
  };
  SplitSpec spec;
  spec.pretraining = number(parts[0]);
  spec.supervised = number(parts[1]);
  std::stringstream vs(parts[2]);
  while (std::getline(vs, part, '+')) spec.validation.push_back(number(trim(part)));
  spec.evaluation = number(parts[3]);
  return spec;
}

ProjectService::ProjectService(fs::path root, ServiceConfig config, OpenOptions options)
    : root_(std::move(root)), config_(std::move(config)), options_(std::move(options)) {}

ProjectDir ProjectService::dir_of(const std::string& project_id) const {
  static const std::regex kId("[A-Za-z0-9][A-Za-z0-9._-]{0,127}");
  if (!std::regex_match(project_id, kId)) fail(ErrorCode::kInvalidArgument, "invalid project id '" + project_id + "'");
  return ProjectDir(root_ / project_id);
}

std::shared_ptr<Project> ProjectService::project(const ProjectDir& dir) {
  const auto key = fs::weakly_canonical(dir.root()).string();
  std::lock_guard lock(mu_);
  auto it = open_.find(key);
  if (it != open_.end()) return it->second;
  std::shared_ptr<Project> p = Project::open(dir, options_);
  open_[key] = p;
  return p;
}

void ProjectService::close(const ProjectDir& dir) {
  const auto key = fs::weakly_canonical(dir.root()).string();
  std::lock_guard lock(mu_);
  open_.erase(key);
}

json ProjectService::create_project(const json& body) {
  if (!body.is_object() || !body.contains("project_id") || !body["project_id"].is_string()) {
    fail(ErrorCode::kInvalidArgument, "body needs a string project_id");
  }
  std::optional<LabelScheme> scheme;
  if (body.contains("scheme")) scheme = LabelScheme::from_json(body["scheme"]);
  return create_project(dir_of(body["project_id"].get<std::string>()), scheme);
}

json ProjectService::create_project(const ProjectDir& dir, const std::optional<LabelScheme>& scheme) {
  if (dir.exists() && (fs::exists(dir.scheme_path()) || dir.started())) {
    fail(ErrorCode::kConflict, "project exists: " + dir.root().filename().string());
  }
  dir.save_scheme(scheme.value_or(LabelScheme::consider_default()));
  return {{"project_id", dir.root().filename().string()}, {"phase", "DRAFT"}};
}

json ProjectService::import_dataset(const ProjectDir& dir, const std::string& body) {
  if (!dir.exists()) fail(ErrorCode::kNotFound, "unknown project " + dir.root().filename().string());
  if (dir.started()) fail(ErrorCode::kConflict, "project already started; its dataset is immutable");
  ProjectLock lock(dir);
  const auto scheme = dir.load_scheme();
  auto dataset = dir.load_records(scheme);

  std::string jsonl = body;
  const auto first = body.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && body[first] == '{') {
    const auto j = json::parse(body, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("records")) {
      if (!j["records"].is_array()) fail(ErrorCode::kInvalidArgument, "records must be an array");
      jsonl.clear();
      for (const auto& r : j["records"]) jsonl += r.dump() + "\n";
    }
  }
  std::istringstream in(jsonl);
  auto summary = import_jsonl(in, scheme, dataset);
  if (!summary.added.empty()) dir.append_records(summary.added, scheme);
  auto out = summary.to_json();
  out["project_id"] = dir.root().filename().string();
  out["records"] = dataset.size();
  return out;
}

json ProjectService::start(const ProjectDir& dir, const json& body) {
  if (!dir.exists()) fail(ErrorCode::kNotFound, "unknown project " + dir.root().filename().string());
  if (dir.started()) fail(ErrorCode::kConflict, "project already started");
  if (!body.is_object()) fail(ErrorCode::kInvalidArgument, "plan body must be a JSON object");
  const auto scheme = dir.load_scheme();
  const auto dataset = dir.load_records(scheme);

  ProjectSettings settings = config_.project;
  settings.project_id = dir.root().filename().string();
  try {
    settings.seed = body.value("seed", settings.seed);
    if (body.contains("policy")) settings.policy = StoppingPolicy::from_json(body["policy"]);
    if (body.contains("target_accuracy")) settings.policy.target_accuracy = body["target_accuracy"].get<double>();
    if (body.contains("max_rounds")) settings.policy.max_rounds = body["max_rounds"].get<std::size_t>();
    if (body.contains("backend")) {
      auto b = parse_backend_kind(body["backend"].get<std::string>());
      if (!b) fail(ErrorCode::kInvalidArgument, "backend must be scripted or remote");
      settings.backend = *b;
    }
    if (body.contains("session_mode")) {
      auto m = parse_session_mode(body["session_mode"].get<std::string>());
      if (!m) fail(ErrorCode::kInvalidArgument, "session_mode must be single or per_phase");
      settings.session_mode = *m;
    }
    settings.task_brief = body.value("task_brief", settings.task_brief);
    settings.forge.batch_min = body.value("batch_min", settings.forge.batch_min);
    settings.forge.batch_max = body.value("batch_max", settings.forge.batch_max);
    settings.context_budget = body.value("context_budget", settings.context_budget);
    if (body.contains("remote")) {
      if (body["remote"].contains("api_key") || body["remote"].contains("key")) {
        fail(ErrorCode::kInvalidArgument, "credentials are read from the environment only");
      }
      settings.remote.url = body["remote"].value("url", settings.remote.url);
      settings.remote.model = body["remote"].value("model", settings.remote.model);
      settings.remote.api_key_env = body["remote"].value("api_key_env", settings.remote.api_key_env);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed plan body: ") + e.what());
  }

  SplitPlan plan;
  if (body.contains("plan")) {
    plan = SplitPlan::from_json(body["plan"]);
  } else if (body.contains("split")) {
    const auto& s = body["split"];
    const SplitSpec spec = s.is_string() ? parse_split_spec(s.get<std::string>()) : SplitSpec::from_json(s);
    plan = make_split_plan(dataset, spec, settings.seed);
  } else {
    fail(ErrorCode::kInvalidArgument, "plan body needs split sizes or an explicit plan");
  }

  std::optional<OracleScript> script;
  if (body.contains("script")) script = OracleScript::from_json(body["script"], scheme);
  else if (settings.backend == BackendKind::kScripted && fs::exists(dir.script_path())) {
    script = OracleScript::from_json(read_json_file(dir.script_path()), scheme);
  }

  Project::start(dir, settings, plan, script, options_).reset();
  return status(dir);
}

json ProjectService::round_view(const Project& p, const RoundState& r) const {
  json j = r.to_json(p.scheme());
  json items = json::array();
  for (const auto& id : r.item_ids) {
    const auto& rec = p.dataset().at(id);
    json item = {{"id", id},
                 {"text", rec.text},
                 {"keyword_span", {rec.keyword_span.start, rec.keyword_span.end}},
                 {"source", rec.source}};
    if (const auto* e = r.predictions.find(id)) {
      item["answer"] = p.scheme().name_of(e->answer);
      item["thinking"] = e->thinking;
    } else {
      item["answer"] = nullptr;
    }
    items.push_back(std::move(item));
  }
  j["items"] = std::move(items);
  j["project_phase"] = to_string(p.phase());
  return j;
}

json ProjectService::pretrain(const ProjectDir& dir) {
  auto p = project(dir);
  const auto comments = p->run_pretraining();
  return {{"comments", comments}, {"phase", to_string(p->phase())}};
}

json ProjectService::advance_batch(const ProjectDir& dir) {
  auto p = project(dir);
  return round_view(*p, p->run_supervised_batch());
}

json ProjectService::current_batch(const ProjectDir& dir) {
  auto p = project(dir);
  auto r = p->current_round();
  if (!r) fail(ErrorCode::kNotFound, "no round awaiting review");
  return round_view(*p, *r);
}

json ProjectService::submit_corrections(const ProjectDir& dir, const std::string& round_id, const json& body) {
  auto p = project(dir);
  json list = body;
  std::string guidelines;
  if (body.is_object()) {
    list = body.value("corrections", json::array());
    guidelines = body.value("guidelines", std::string{});
  }
  const auto notes = p->corrections_from_json(round_id, list);
  return round_view(*p, p->submit_corrections(round_id, notes, guidelines));
}

json ProjectService::validate(const ProjectDir& dir, const json& body) {
  auto p = project(dir);
  const std::string guidelines = body.is_object() ? body.value("guidelines", std::string{}) : std::string{};
  const auto r = p->run_validation_round(guidelines);
  json j = r.to_json(p->scheme());
  const auto d = p->last_decision();
  j["decision"] = d ? json(to_string(*d)) : json(nullptr);
  j["project_phase"] = to_string(p->phase());
  j["validation_accuracies"] = p->validation_history();
  return j;
}

json ProjectService::evaluate(const ProjectDir& dir) {
  auto p = project(dir);
  p->run_blind_evaluation();
  return metrics(dir);
}

json ProjectService::metrics(const ProjectDir& dir) {
  auto p = project(dir);
  const auto eval = p->evaluation_metrics();
  const auto d = p->last_decision();
  json rounds = json::array();
  for (const auto& r : p->rounds()) {
    if (!r.accuracy) continue;
    rounds.push_back({{"round_id", r.round_id}, {"phase", to_string(r.phase)}, {"accuracy", *r.accuracy}});
  }
  return {{"project_id", p->settings().project_id},
          {"phase", to_string(p->phase())},
          {"target_accuracy", p->settings().policy.target_accuracy},
          {"rounds", rounds},
          {"validation_accuracies", p->validation_history()},
          {"stop_decision", d ? json(to_string(*d)) : json(nullptr)},
          {"evaluation", eval ? eval->to_json() : json(nullptr)},
          {"report", eval ? json(format_report(*eval, true)) : json(nullptr)}};
}

json ProjectService::status(const ProjectDir& dir) {
  if (!dir.exists()) fail(ErrorCode::kNotFound, "unknown project " + dir.root().filename().string());
  if (!dir.started()) {
    const auto scheme = dir.load_scheme();
    const auto dataset = dir.load_records(scheme);
    return {{"project_id", dir.root().filename().string()}, {"phase", "DRAFT"}, {"records", dataset.size()}};
  }
  return project(dir)->status_json();
}

json ProjectService::transcript(const ProjectDir& dir) {
  auto p = project(dir);
  const auto t = make_transcript(*p);
  json events = json::array();
  for (const auto& e : t.events) events.push_back(e.to_json());
  return {{"header", t.header}, {"events", events}, {"text", t.render_text()}};
}

json ProjectService::events(const ProjectDir& dir, std::uint64_t since, std::chrono::milliseconds timeout) {
  auto p = project(dir);
  json out = json::array();
  for (const auto& e : p->events().wait_since(since, timeout)) {
    if (e.type == "prompt" || e.type == "reply" || e.type == "session_opened") continue;
    out.push_back(e.to_json());
  }
  return {{"events", out}, {"last_seq", p->events().last_seq()}};
}

}  // namespace annot
