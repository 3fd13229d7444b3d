#include "annot/model_gateway.hpp"

#include <atomic>
#include <cstdlib>
#include <set>

#include "annot/error.hpp"
#include "annot/text.hpp"

namespace annot {

using nlohmann::json;

std::string_view to_string(BackendKind kind) {
  return kind == BackendKind::kRemote ? "REMOTE" : "SCRIPTED";
}

std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  const auto l = to_lower(s);
  if (l == "remote") return BackendKind::kRemote;
  if (l == "scripted") return BackendKind::kScripted;
  return std::nullopt;
}

json RoundSchedule::to_json() const {
  json j = json::object();
  if (error_rate) j["error_rate"] = *error_rate;
  if (false_positives) j["fp"] = *false_positives;
  if (false_negatives) j["fn"] = *false_negatives;
  if (abstain) j["abstain"] = abstain;
  return j;
}

RoundSchedule RoundSchedule::from_json(const json& j) {
  RoundSchedule s;
  if (j.is_number()) {
    s.error_rate = j.get<double>();
    return s;
  }
  if (!j.is_object()) fail(ErrorCode::kConfiguration, "round schedule must be a number or an object");
  if (j.contains("error_rate")) s.error_rate = j["error_rate"].get<double>();
  if (j.contains("fp")) s.false_positives = j["fp"].get<std::size_t>();
  if (j.contains("fn")) s.false_negatives = j["fn"].get<std::size_t>();
  s.abstain = j.value("abstain", std::size_t{0});
  return s;
}

void OracleScript::validate() const {
  for (const auto& [phase, list] : rounds) {
    for (const auto& r : list) {
      if (r.error_rate && (*r.error_rate < 0.0 || *r.error_rate > 1.0)) {
        fail(ErrorCode::kConfiguration, "error rate outside [0,1] in phase " + phase);
      }
      if (r.error_rate && (r.false_positives || r.false_negatives)) {
        fail(ErrorCode::kConfiguration, "round schedule mixes a rate with exact counts in phase " + phase);
      }
    }
  }
}

RoundSchedule OracleScript::schedule_for(const std::string& phase, int round) const {
  auto it = rounds.find(phase);
  if (it == rounds.end() || it->second.empty()) return RoundSchedule{0.0, {}, {}, 0};
  const auto& list = it->second;
  const std::size_t idx = round <= 0 ? 0 : static_cast<std::size_t>(round - 1);
  return list[std::min(idx, list.size() - 1)];
}

json OracleScript::to_json(const LabelScheme& scheme) const {
  json g = json::object();
  for (const auto& [id, l] : gold) g[id] = scheme.name_of(l);
  json r = json::object();
  for (const auto& [phase, list] : rounds) {
    json arr = json::array();
    for (const auto& s : list) arr.push_back(s.to_json());
    r[phase] = arr;
  }
  return {{"seed", seed}, {"gold", g}, {"rounds", r}, {"comments", comments}};
}

OracleScript OracleScript::from_json(const json& j, const LabelScheme& scheme) {
  OracleScript s;
  try {
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("gold")) {
      for (const auto& [id, v] : j["gold"].items()) {
        auto l = scheme.parse(v.get<std::string>());
        if (!l) fail(ErrorCode::kConfiguration, "script gold label for '" + id + "' not in scheme");
        s.gold[id] = *l;
      }
    }
    if (j.contains("rounds")) {
      for (const auto& [phase, list] : j["rounds"].items()) {
        auto& dst = s.rounds[phase];
        if (list.is_array()) {
          for (const auto& e : list) dst.push_back(RoundSchedule::from_json(e));
        } else {
          dst.push_back(RoundSchedule::from_json(list));
        }
      }
    }
    if (j.contains("comments")) s.comments = j["comments"].get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfiguration, std::string("malformed oracle script: ") + e.what());
  }
  s.validate();
  return s;
}

Session::Session(std::string id, BackendKind kind, std::unique_ptr<ChatBackend> backend,
                 std::size_t context_budget)
    : id_(std::move(id)), kind_(kind), backend_(std::move(backend)), budget_(context_budget) {}

std::vector<Turn> Session::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

std::size_t Session::history_chars() const {
  std::lock_guard lock(mu_);
  return chars_;
}

std::string Session::send(const PromptDoc& doc) {
  std::lock_guard lock(mu_);
  const auto report = validate_prompt(doc);
  if (!report.ok()) {
    fail(ErrorCode::kInvalidArgument, "prompt failed validation: " + report.violations.front());
  }
  if (chars_ + doc.rendered.size() > budget_) {
    fail(ErrorCode::kBudgetExceeded,
         "context budget of " + std::to_string(budget_) + " characters would be exceeded (" +
             std::to_string(chars_ + doc.rendered.size()) + "); start a new phase-scoped session");
  }
  std::string reply = backend_->complete(history_, doc);
  chars_ += doc.rendered.size() + reply.size();
  history_.push_back({doc.kind, doc.meta, doc.rendered, reply});
  return reply;
}

void Session::restore(Turn turn) {
  std::lock_guard lock(mu_);
  chars_ += turn.prompt.size() + turn.reply.size();
  history_.push_back(std::move(turn));
}

std::unique_ptr<Session> open_session(const SessionConfig& config) {
  static std::atomic<unsigned> counter{0};
  std::string id = config.session_id.empty() ? "session-" + std::to_string(++counter) : config.session_id;
  if (config.kind == BackendKind::kScripted) {
    if (!config.script) fail(ErrorCode::kConfiguration, "scripted backend requires an oracle script");
    config.script->validate();
    return std::make_unique<Session>(std::move(id), config.kind,
                                     make_scripted_backend(*config.script, config.scheme),
                                     config.context_budget);
  }
  if (config.remote.url.empty()) fail(ErrorCode::kConfiguration, "remote backend requires an endpoint URL");
  const char* key = std::getenv(config.remote.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    fail(ErrorCode::kConfiguration, "remote backend credential missing: set " + config.remote.api_key_env);
  }
  return std::make_unique<Session>(std::move(id), config.kind, make_remote_backend(config.remote, key),
                                   config.context_budget);
}

const ParsedEntry* ParsedClassifications::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.record_id == id) return &e;
  }
  return nullptr;
}

json ParsedClassifications::to_json(const LabelScheme& scheme) const {
  json e = json::array();
  for (const auto& x : entries) {
    e.push_back({{"id", x.record_id}, {"answer", scheme.name_of(x.answer)}, {"thinking", x.thinking}});
  }
  return {{"entries", e}, {"model_comments", model_comments}, {"unparsed_ids", unparsed_ids}};
}

ParsedClassifications ParsedClassifications::from_json(const json& j, const LabelScheme& scheme) {
  ParsedClassifications p;
  for (const auto& x : j.at("entries")) {
    auto l = scheme.parse(x.at("answer").get<std::string>());
    if (!l) fail(ErrorCode::kIo, "stored answer not in scheme");
    p.entries.push_back({x.at("id").get<std::string>(), *l, x.value("thinking", std::string{})});
  }
  p.model_comments = j.value("model_comments", std::string{});
  p.unparsed_ids = j.value("unparsed_ids", std::vector<std::string>{});
  return p;
}

namespace {

struct ItemBlock {
  std::string id;
  std::string inner;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Parses `<item id="X">` or `<item id='X'>` at pos; returns the id on success.
std::optional<std::pair<std::string, std::size_t>> item_open_at(const std::string& s, std::size_t pos) {
  static constexpr std::string_view kOpen = "<item";
  if (s.compare(pos, kOpen.size(), kOpen) != 0) return std::nullopt;
  std::size_t i = pos + kOpen.size();
  while (i < s.size() && s[i] == ' ') ++i;
  if (s.compare(i, 3, "id=") != 0) return std::nullopt;
  i += 3;
  if (i >= s.size() || (s[i] != '"' && s[i] != '\'')) return std::nullopt;
  const char q = s[i++];
  const auto close = s.find(q, i);
  if (close == std::string::npos) return std::nullopt;
  std::string id = xml_unescape(s.substr(i, close - i));
  std::size_t j = close + 1;
  while (j < s.size() && s[j] == ' ') ++j;
  if (j >= s.size() || s[j] != '>') return std::nullopt;
  return std::make_pair(std::move(id), j + 1);
}

std::vector<ItemBlock> find_items(const std::string& s) {
  std::vector<ItemBlock> out;
  std::size_t pos = 0;
  while ((pos = s.find("<item", pos)) != std::string::npos) {
    auto open = item_open_at(s, pos);
    if (!open) {
      ++pos;
      continue;
    }
    const std::size_t body = open->second;
    const auto close = s.find("</item>", body);
    std::size_t next_open = body;
    while ((next_open = s.find("<item", next_open)) != std::string::npos && !item_open_at(s, next_open)) {
      ++next_open;
    }
    std::size_t inner_end;
    std::size_t end;
    if (close != std::string::npos && (next_open == std::string::npos || close < next_open)) {
      inner_end = close;
      end = close + 7;
    } else {
      inner_end = next_open == std::string::npos ? s.size() : next_open;
      end = inner_end;
    }
    out.push_back({open->first, s.substr(body, inner_end - body), pos, end});
    pos = end;
  }
  return out;
}

std::vector<std::string> tag_contents(const std::string& s, const std::string& tag) {
  std::vector<std::string> out;
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  std::size_t pos = 0;
  while ((pos = s.find(open, pos)) != std::string::npos) {
    const auto b = pos + open.size();
    const auto e = s.find(close, b);
    if (e == std::string::npos) break;
    out.push_back(s.substr(b, e - b));
    pos = e + close.size();
  }
  return out;
}

}  // namespace

ParsedClassifications parse_reply(const std::string& raw, const std::vector<std::string>& expected_ids,
                                  const LabelScheme& scheme) {
  const std::set<std::string> expected(expected_ids.begin(), expected_ids.end());
  std::map<std::string, std::optional<Label>> answers;  // nullopt = ambiguous
  std::map<std::string, std::string> thinking;
  std::string comments;
  std::size_t cursor = 0;

  for (const auto& item : find_items(raw)) {
    comments += raw.substr(cursor, item.begin - cursor);
    cursor = item.end;
    if (!expected.count(item.id)) {
      comments += raw.substr(item.begin, item.end - item.begin);
      continue;
    }
    std::optional<Label> answer;
    bool ambiguous = false;
    const auto found = tag_contents(item.inner, "answer");
    for (const auto& a : found) {
      auto l = scheme.parse(xml_unescape(a));
      if (!l || (answer && *answer != *l)) {
        ambiguous = true;
        break;
      }
      answer = l;
    }
    if (found.empty()) continue;
    auto [it, inserted] = answers.try_emplace(item.id, ambiguous ? std::nullopt : answer);
    if (!inserted && it->second != (ambiguous ? std::nullopt : answer)) it->second = std::nullopt;
    if (!thinking.count(item.id)) {
      const auto t = tag_contents(item.inner, "thinking");
      if (!t.empty()) thinking[item.id] = trim(t.front());
    }
  }
  comments += raw.substr(std::min(cursor, raw.size()));

  ParsedClassifications out;
  std::set<std::string> emitted;
  for (const auto& id : expected_ids) {
    if (!emitted.insert(id).second) continue;
    auto it = answers.find(id);
    if (it == answers.end() || !it->second) {
      out.unparsed_ids.push_back(id);
      continue;
    }
    out.entries.push_back({id, *it->second, thinking.count(id) ? thinking[id] : ""});
  }
  out.model_comments = trim(comments);
  return out;
}

}  // namespace annot
