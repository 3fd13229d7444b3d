#include "annot/transcript.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "annot/error.hpp"

namespace annot {

using nlohmann::json;
namespace fs = std::filesystem;

void Transcript::write_jsonl(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << header.dump() << '\n';
  for (const auto& e : events) out << e.to_json().dump() << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed on " + path.string());
}

Transcript Transcript::read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open transcript " + path.string());
  Transcript t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      if (n == 1) {
        if (j.value("format", std::string{}) != kTranscriptFormat) {
          fail(ErrorCode::kInvalidArgument, path.string() + ": not an " + std::string(kTranscriptFormat) + " file");
        }
        t.header = std::move(j);
      } else {
        t.events.push_back(Event::from_json(j));
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidArgument, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (t.header.is_null()) fail(ErrorCode::kInvalidArgument, path.string() + ": empty transcript");
  return t;
}

namespace {

std::string rule(const std::string& title) { return "----- " + title + " -----\n"; }

std::string pct(const json& v) {
  if (!v.is_number()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f %%", v.get<double>() * 100.0);
  return buf;
}

}  // namespace

std::string Transcript::render_text() const {
  std::ostringstream out;
  out << "annot transcript, project " << header.value("project_id", std::string{}) << "\n";
  out << "backend " << header.value("backend", std::string{}) << ", session mode "
      << header.value("session_mode", std::string{}) << ", created " << header.value("created", std::string{})
      << "\n";
  if (header.contains("split")) out << "split " << header["split"].dump() << "\n";
  if (header.contains("policy")) out << "policy " << header["policy"].dump() << "\n";
  out << "\n";
  for (const auto& e : events) {
    const auto& d = e.data;
    if (e.type == "prompt") {
      out << rule("PROMPT turn " + std::to_string(d.value("turn", 0)) + ", " + d.value("kind", std::string{}) +
                  ", round " + d.value("round_id", std::string{}) + ", session " + d.value("session", std::string{}));
      out << d.value("rendered", std::string{}) << "\n";
    } else if (e.type == "reply") {
      out << rule("REPLY turn " + std::to_string(d.value("turn", 0)));
      out << d.value("raw", std::string{}) << "\n\n";
    } else if (e.type == "round_opened") {
      out << "== round " << d.value("round_id", std::string{}) << " opened with "
          << d.value("item_ids", json::array()).size() << " items\n";
    } else if (e.type == "corrections") {
      out << "== corrections for " << d.value("round_id", std::string{}) << "\n";
      for (const auto& c : d.value("corrections", json::array())) {
        out << "   " << c.value("id", std::string{}) << ": " << c.value("model_answer", std::string{}) << " -> "
            << c.value("correct_answer", std::string{});
        if (!c.value("reason", std::string{}).empty()) out << " (" << c.value("reason", std::string{}) << ")";
        out << "\n";
      }
    } else if (e.type == "round_closed") {
      out << "== round " << d.value("round_id", std::string{}) << " closed, accuracy "
          << pct(d.value("accuracy", json(nullptr))) << "\n";
      if (d.contains("metrics") && !d["metrics"].is_null()) {
        out << format_report(MetricsReport::from_json(d["metrics"])) << "\n";
      }
    } else if (e.type == "phase_advanced") {
      out << "== phase " << d.value("from", std::string{}) << " -> " << d.value("to", std::string{}) << "\n\n";
    } else if (e.type == "stop_decision") {
      out << "== stopping rule: " << d.value("decision", std::string{}) << "\n";
    } else if (e.type == "session_opened") {
      out << "== new session " << d.value("session", std::string{}) << " with "
          << d.value("preamble_turns", json::array()).size() << " preamble turns\n";
    } else if (e.type == "evaluation_completed") {
      out << "== blind evaluation completed\n";
    }
  }
  return out.str();
}

Transcript make_transcript(const Project& project) {
  Transcript t;
  t.header = project.settings().to_json();
  t.header["format"] = kTranscriptFormat;
  t.header["scheme"] = project.scheme().to_json();
  for (const auto& e : project.events().all()) {
    if (e.type != "project_started") t.events.push_back(e);
  }
  return t;
}

TranscriptFiles export_transcript(const Project& project, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto t = make_transcript(project);
  TranscriptFiles files{out_dir / "transcript.jsonl", out_dir / "transcript.txt"};
  t.write_jsonl(files.jsonl);
  std::ofstream txt(files.text, std::ios::trunc);
  if (!txt) fail(ErrorCode::kIo, "cannot write " + files.text.string());
  txt << t.render_text();
  return files;
}

bool ReplayReport::identical() const {
  if (identical_replies != prompts) return false;
  for (const auto& r : rounds) {
    if (r.original_accuracy != r.replay_accuracy) return false;
  }
  return true;
}

const ReplayRound* ReplayReport::find(const std::string& round_id) const {
  for (const auto& r : rounds) {
    if (r.round_id == round_id) return &r;
  }
  return nullptr;
}

json ReplayReport::to_json() const {
  json rs = json::array();
  for (const auto& r : rounds) {
    rs.push_back({{"round_id", r.round_id},
                  {"phase", to_string(r.phase)},
                  {"original_accuracy", r.original_accuracy ? json(*r.original_accuracy) : json(nullptr)},
                  {"replay_accuracy", r.replay_accuracy ? json(*r.replay_accuracy) : json(nullptr)},
                  {"replay_metrics", r.replay_metrics ? r.replay_metrics->to_json() : json(nullptr)}});
  }
  return {{"prompts", prompts}, {"identical_replies", identical_replies}, {"identical", identical()}, {"rounds", rs}};
}

namespace {

struct RoundReplay {
  Phase phase = Phase::kSupervised;
  std::vector<std::string> item_ids;
  std::map<std::string, Label> original;   // recorded answers
  std::map<std::string, Label> replayed;   // answers from the replay
  std::map<std::string, Label> corrected;  // reviewer corrections
};

}  // namespace

ReplayReport replay_transcript(const Transcript& transcript, const Dataset& dataset, const LabelScheme& scheme,
                               const SessionFactory& factory) {
  ReplayReport report;
  std::map<std::string, std::unique_ptr<Session>> sessions;
  std::map<std::uint64_t, Turn> replayed_turns;
  std::map<std::uint64_t, std::string> original_replies;
  std::map<std::uint64_t, std::pair<std::string, PromptDoc>> pending;
  std::map<std::string, RoundReplay> rounds;

  for (const auto& e : transcript.events) {
    if (e.type == "reply") original_replies[e.data.at("turn").get<std::uint64_t>()] = e.data.at("raw").get<std::string>();
  }

  auto session_for = [&](const std::string& id) -> Session& {
    auto& s = sessions[id];
    if (!s) s = factory(id);
    return *s;
  };

  for (const auto& e : transcript.events) {
    const auto& d = e.data;
    if (e.type == "session_opened") {
      auto& s = session_for(d.at("session").get<std::string>());
      for (auto n : d.value("preamble_turns", std::vector<std::uint64_t>{})) {
        auto it = replayed_turns.find(n);
        if (it != replayed_turns.end()) s.restore(it->second);
      }
    } else if (e.type == "round_opened") {
      auto& r = rounds[d.at("round_id").get<std::string>()];
      r.phase = parse_phase(d.at("phase").get<std::string>()).value_or(Phase::kSupervised);
      r.item_ids = d.value("item_ids", std::vector<std::string>{});
    } else if (e.type == "prompt") {
      const auto turn = d.at("turn").get<std::uint64_t>();
      if (!original_replies.count(turn)) continue;  // never answered
      auto kind = parse_prompt_kind(d.at("kind").get<std::string>());
      if (!kind) fail(ErrorCode::kInvalidArgument, "transcript names an unknown prompt kind");
      PromptMeta meta{d.value("phase", std::string{}), d.value("ordinal", 0)};
      auto doc = parse_prompt(*kind, d.at("rendered").get<std::string>(), meta);
      auto& session = session_for(d.at("session").get<std::string>());
      const std::string reply = session.send(doc);
      ++report.prompts;
      if (reply == original_replies[turn]) ++report.identical_replies;
      replayed_turns[turn] = Turn{*kind, meta, doc.rendered, reply};

      const auto round_id = d.value("round_id", std::string{});
      if ((*kind == PromptKind::kBatch || *kind == PromptKind::kReask) && rounds.count(round_id)) {
        auto& r = rounds[round_id];
        const auto ids = doc.item_ids();
        const auto parsed = parse_reply(reply, ids, scheme);
        for (const auto& entry : parsed.entries) r.replayed.try_emplace(entry.record_id, entry.answer);
      }
    } else if (e.type == "predictions") {
      auto it = rounds.find(d.at("round_id").get<std::string>());
      if (it == rounds.end()) continue;
      const auto parsed = ParsedClassifications::from_json(d.at("parsed"), scheme);
      for (const auto& entry : parsed.entries) it->second.original[entry.record_id] = entry.answer;
    } else if (e.type == "corrections") {
      auto it = rounds.find(d.at("round_id").get<std::string>());
      if (it == rounds.end()) continue;
      for (const auto& c : d.at("corrections")) {
        const auto note = CorrectionNote::from_json(c, scheme);
        it->second.corrected[note.record_id()] = note.correct_answer();
      }
    } else if (e.type == "round_closed") {
      const auto round_id = d.at("round_id").get<std::string>();
      auto it = rounds.find(round_id);
      if (it == rounds.end() || !d.contains("accuracy") || d["accuracy"].is_null()) continue;
      const auto& r = it->second;
      ReplayRound out;
      out.round_id = round_id;
      out.phase = r.phase;
      out.original_accuracy = d["accuracy"].get<double>();
      if (r.phase == Phase::kSupervised) {
        std::size_t correct = 0;
        for (const auto& id : r.item_ids) {
          std::optional<Label> truth;
          if (auto c = r.corrected.find(id); c != r.corrected.end()) truth = c->second;
          else if (auto o = r.original.find(id); o != r.original.end()) truth = o->second;
          else if (const auto* rec = dataset.find(id)) truth = rec->gold_label;
          auto p = r.replayed.find(id);
          if (truth && p != r.replayed.end() && p->second == *truth) ++correct;
        }
        const double n = static_cast<double>(r.item_ids.size());
        out.replay_accuracy = (n - static_cast<double>(r.item_ids.size() - correct)) / n;
      } else {
        std::map<std::string, Label> gold;
        for (const auto& id : r.item_ids) {
          const auto& rec = dataset.at(id);
          if (!rec.gold_label) fail(ErrorCode::kInvalidArgument, "replay needs gold for " + id);
          gold[id] = *rec.gold_label;
        }
        std::map<std::string, Label> predictions;
        for (const auto& [id, l] : r.replayed) {
          if (gold.count(id)) predictions[id] = l;
        }
        out.replay_metrics = score(confusion(predictions, gold));
        out.replay_accuracy = out.replay_metrics->accuracy;
      }
      report.rounds.push_back(std::move(out));
    }
  }
  return report;
}

SessionFactory scripted_factory(OracleScript script, LabelScheme scheme, std::size_t context_budget) {
  return [script = std::move(script), scheme = std::move(scheme), context_budget](const std::string& id) {
    SessionConfig cfg;
    cfg.kind = BackendKind::kScripted;
    cfg.session_id = id;
    cfg.script = script;
    cfg.scheme = scheme;
    cfg.context_budget = context_budget;
    return open_session(cfg);
  };
}

}  // namespace annot
