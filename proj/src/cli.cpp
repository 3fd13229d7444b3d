#include "annot/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "annot/extractor.hpp"
#include "annot/http_api.hpp"
#include "annot/project_service.hpp"
#include "annot/transcript.hpp"

namespace annot {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConflict:
    case ErrorCode::kBudgetExceeded: return 2;
    case ErrorCode::kNotFound: return 3;
    case ErrorCode::kUnavailable: return 4;
    default: return 1;
  }
}

namespace {

std::string read_text(const std::string& path) {
  if (path == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_arg(const std::string& path) {
  auto j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::kInvalidArgument, path + " is not valid JSON");
  return j;
}

std::map<std::string, std::size_t> parse_quotas(const std::string& text) {
  std::map<std::string, std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kInvalidArgument, "quota '" + part + "' is not NAME=COUNT");
    try {
      out[trim(part.substr(0, eq))] = std::stoul(part.substr(eq + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "quota '" + part + "' has a bad count");
    }
  }
  return out;
}

struct Options {
  std::string config;
  std::string project;
  std::string in;
  std::vector<std::string> inputs;
  std::string out;
  std::string pattern;
  std::string scheme;
  std::string split;
  std::uint64_t seed = 0;
  std::string script;
  std::string backend;
  std::string session_mode;
  std::optional<double> target;
  std::optional<std::size_t> max_rounds;
  std::string plan_file;
  std::string task_brief;
  std::string round;
  std::string corrections;
  std::string guidelines;
  std::size_t n = 0;
  std::string stratify;
  std::string quotas;
  bool as_json = false;
  std::string replay_script;
  std::string root = "projects";
  std::string host;
  int port = -1;
};

void write_records(std::ostream& out, const std::vector<CandidateToken>& c, const LabelScheme& scheme) {
  std::vector<SentenceRecord> records;
  records.reserve(c.size());
  for (const auto& t : c) records.push_back(t.record);
  write_jsonl(out, records, scheme);
}

void emit_records(const Options& o, std::ostream& out, const std::vector<CandidateToken>& c,
                  const LabelScheme& scheme) {
  if (o.out.empty() || o.out == "-") {
    write_records(out, c, scheme);
    return;
  }
  std::ofstream f(o.out, std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot write " + o.out);
  write_records(f, c, scheme);
}

ApiServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"annot: corpus annotation with a supervised language-model loop", "annot"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "INI file with backend, batch, policy and server defaults");

  auto* extract = app.add_subcommand("extract", "Scan corpus text for candidate tokens");
  extract->add_option("--pattern", o.pattern, "Pattern JSON (default: built-in consider pattern)");
  extract->add_option("--in", o.inputs, "Input files or glob patterns (plain or gzip)")->required();
  extract->add_option("--out", o.out, "Output JSONL (default stdout)");

  auto* sample = app.add_subcommand("sample", "Draw a random or stratified sample of candidates");
  sample->add_option("--in", o.in, "Candidate JSONL")->required();
  sample->add_option("--n", o.n, "Sample size (random sampling)");
  sample->add_option("--seed", o.seed, "Random seed");
  sample->add_option("--stratify", o.stratify, "Stratum key: variant")->check(CLI::IsMember({"variant"}));
  sample->add_option("--quota", o.quotas, "Per-stratum counts, e.g. BARE=10,AS=5,TO_BE=5");
  sample->add_option("--out", o.out, "Output JSONL (default stdout)");

  auto* import = app.add_subcommand("import", "Import sentence records into a project");
  import->add_option("--project", o.project, "Project directory")->required();
  import->add_option("--in", o.in, "Records JSONL ('-' for stdin)")->required();
  import->add_option("--scheme", o.scheme, "Label scheme JSON for a new project");

  auto* plan = app.add_subcommand("plan", "Split the dataset and start the project");
  plan->add_option("--project", o.project, "Project directory")->required();
  plan->add_option("--split", o.split, "pretraining,supervised,validation rounds joined by +,evaluation");
  plan->add_option("--plan-file", o.plan_file, "Explicit split plan JSON");
  plan->add_option("--seed", o.seed, "Shuffle seed");
  plan->add_option("--script", o.script, "Oracle script JSON for the scripted backend");
  plan->add_option("--backend", o.backend, "scripted or remote");
  plan->add_option("--session-mode", o.session_mode, "single or per_phase");
  plan->add_option("--target", o.target, "Target validation accuracy");
  plan->add_option("--max-rounds", o.max_rounds, "Maximum validation rounds");
  plan->add_option("--task-brief", o.task_brief, "Task description for the pretraining prompt");

  auto* pretrain = app.add_subcommand("pretrain", "Send the pretraining prompt");
  pretrain->add_option("--project", o.project, "Project directory")->required();

  auto* batch = app.add_subcommand("batch", "Classify the next supervised batch");
  batch->add_option("--project", o.project, "Project directory")->required();

  auto* correct = app.add_subcommand("correct", "Submit corrections for a supervised round");
  correct->add_option("--project", o.project, "Project directory")->required();
  correct->add_option("--round", o.round, "Round id, e.g. supervised-1")->required();
  correct->add_option("--corrections", o.corrections, "JSON array of {id, correct_answer, reason} ('-' for stdin)")
      ->required();
  correct->add_option("--guidelines", o.guidelines, "Extra guidelines appended to the feedback");

  auto* validate = app.add_subcommand("validate", "Run the next unsupervised validation round");
  validate->add_option("--project", o.project, "Project directory")->required();
  validate->add_option("--guidelines", o.guidelines, "New instructions for the summary feedback");

  auto* evaluate = app.add_subcommand("evaluate", "Run the blind evaluation");
  evaluate->add_option("--project", o.project, "Project directory")->required();

  auto* report = app.add_subcommand("report", "Print round accuracies and evaluation metrics");
  report->add_option("--project", o.project, "Project directory")->required();
  report->add_flag("--json", o.as_json, "Print the metrics document");

  auto* transcript = app.add_subcommand("transcript", "Export the project transcript");
  transcript->add_option("--project", o.project, "Project directory")->required();
  transcript->add_option("--out", o.out, "Output directory (default: the project directory)");
  transcript->add_option("--replay-script", o.replay_script, "Replay the transcript against this oracle script");

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--root", o.root, "Directory holding projects");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_option("--port", o.port, "Port");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return kUsageExit;
  }

  try {
    ServiceConfig config = o.config.empty() ? ServiceConfig{} : ServiceConfig::load(o.config);
    const fs::path project_path = o.project.empty() ? fs::path{} : fs::path(o.project);
    const ProjectDir dir(project_path);
    ProjectService service(project_path.has_parent_path() ? project_path.parent_path() : fs::path("."), config);

    if (*extract) {
      const auto spec = o.pattern.empty() ? PatternSpec::consider_default() : PatternSpec::load(o.pattern);
      std::vector<fs::path> paths;
      for (const auto& in : o.inputs) {
        auto found = expand_glob(in);
        if (found.empty()) fail(ErrorCode::kNotFound, "no input matches " + in);
        paths.insert(paths.end(), found.begin(), found.end());
      }
      ScanStats stats;
      const auto candidates = scan_files(paths, spec, &stats);
      emit_records(o, out, candidates, LabelScheme::consider_default());
      for (const auto& w : stats.warnings) err << "warning: line " << w.line << ": " << w.message << "\n";
      err << "scanned " << stats.lines << " lines, " << stats.candidates << " candidates\n";
    } else if (*sample) {
      const auto scheme = LabelScheme::consider_default();
      Dataset ds;
      std::ifstream in(o.in);
      if (!in) fail(ErrorCode::kNotFound, "cannot read " + o.in);
      const auto summary = import_jsonl(in, scheme, ds);
      if (!summary.rejects.empty()) {
        fail(ErrorCode::kInvalidArgument, o.in + ":" + std::to_string(summary.rejects.front().line) + ": " +
                                              summary.rejects.front().reason);
      }
      std::vector<CandidateToken> candidates;
      for (const auto& r : ds.records()) candidates.push_back(candidate_from_record(r));
      std::vector<CandidateToken> picked;
      if (!o.stratify.empty()) {
        if (o.quotas.empty()) fail(ErrorCode::kInvalidArgument, "--stratify needs --quota");
        picked = sample_stratified(candidates, stratify_by_variant(), parse_quotas(o.quotas), o.seed);
      } else {
        picked = sample_random(candidates, o.n, o.seed);
      }
      emit_records(o, out, picked, scheme);
    } else if (*import) {
      if (!fs::exists(dir.scheme_path()) && !dir.started()) {
        std::optional<LabelScheme> scheme;
        if (!o.scheme.empty()) scheme = LabelScheme::from_json(read_json_arg(o.scheme));
        service.create_project(dir, scheme);
      } else if (!o.scheme.empty()) {
        fail(ErrorCode::kConflict, "project already has a label scheme");
      }
      const auto summary = service.import_dataset(dir, read_text(o.in));
      out << summary.dump(2) << "\n";
    } else if (*plan) {
      json body = json::object();
      if (!o.split.empty()) body["split"] = o.split;
      if (!o.plan_file.empty()) body["plan"] = read_json_arg(o.plan_file);
      body["seed"] = o.seed;
      if (!o.script.empty()) body["script"] = read_json_arg(o.script);
      if (!o.backend.empty()) body["backend"] = o.backend;
      if (!o.session_mode.empty()) body["session_mode"] = o.session_mode;
      if (o.target) body["target_accuracy"] = *o.target;
      if (o.max_rounds) body["max_rounds"] = *o.max_rounds;
      if (!o.task_brief.empty()) body["task_brief"] = o.task_brief;
      out << service.start(dir, body).dump(2) << "\n";
    } else if (*pretrain) {
      out << service.pretrain(dir).dump(2) << "\n";
    } else if (*batch) {
      out << service.advance_batch(dir).dump(2) << "\n";
    } else if (*correct) {
      json body = read_json_arg(o.corrections);
      if (!body.is_object()) body = {{"corrections", body}};
      if (!o.guidelines.empty()) body["guidelines"] = o.guidelines;
      out << service.submit_corrections(dir, o.round, body).dump(2) << "\n";
    } else if (*validate) {
      out << service.validate(dir, {{"guidelines", o.guidelines}}).dump(2) << "\n";
    } else if (*evaluate) {
      const auto m = service.evaluate(dir);
      out << m.value("report", std::string{}) << "\n";
    } else if (*report) {
      const auto m = service.metrics(dir);
      if (o.as_json) {
        out << m.dump(2) << "\n";
      } else {
        out << "Project " << m["project_id"].get<std::string>() << ", phase " << m["phase"].get<std::string>()
            << "\n";
        for (const auto& r : m["rounds"]) {
          char buf[128];
          std::snprintf(buf, sizeof buf, "  %-16s %6.2f %%\n", r["round_id"].get<std::string>().c_str(),
                        r["accuracy"].get<double>() * 100.0);
          out << buf;
        }
        if (!m["stop_decision"].is_null()) out << "Stopping rule: " << m["stop_decision"].get<std::string>() << "\n";
        if (!m["report"].is_null()) out << "\n" << m["report"].get<std::string>() << "\n";
      }
    } else if (*transcript) {
      auto p = service.project(dir);
      const auto files = export_transcript(*p, o.out.empty() ? dir.root() : fs::path(o.out));
      json j = {{"jsonl", files.jsonl.string()}, {"text", files.text.string()}};
      if (!o.replay_script.empty()) {
        const auto script = OracleScript::from_json(read_json_arg(o.replay_script), p->scheme());
        auto gold_filled = script;
        for (const auto& r : p->dataset().records()) {
          if (r.gold_label && !gold_filled.gold.count(r.id)) gold_filled.gold[r.id] = *r.gold_label;
        }
        const auto t = Transcript::read_jsonl(files.jsonl);
        const auto rep = replay_transcript(t, p->dataset(), p->scheme(),
                                           scripted_factory(gold_filled, p->scheme(), p->settings().context_budget));
        j["replay"] = rep.to_json();
      }
      out << j.dump(2) << "\n";
    } else if (*serve) {
      const std::string host = o.host.empty() ? config.host : o.host;
      const int port = o.port < 0 ? config.port : o.port;
      const fs::path root = serve->count("--root") ? fs::path(o.root) : config.root;
      fs::create_directories(root);
      ProjectService svc(root, config);
      ApiServer server(svc);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      err << "serving " << root.string() << " on http://" << host << ":" << port << "\n";
      server.run(host, port);
      g_server = nullptr;
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cli_dispatch(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, out, err);
}

}  // namespace annot
