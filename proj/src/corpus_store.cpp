#include "annot/corpus_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "annot/error.hpp"
#include "annot/text.hpp"

namespace annot {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::size_t utf8_byte_offset(std::string_view s, std::size_t cp) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (seen == cp) return i;
      ++seen;
    }
  }
  return s.size();
}

std::size_t utf8_codepoint_index(std::string_view s, std::size_t byte) {
  return utf8_length(s.substr(0, std::min(byte, s.size())));
}

std::pair<std::size_t, std::size_t> SentenceRecord::keyword_bytes() const {
  return {utf8_byte_offset(text, keyword_span.start), utf8_byte_offset(text, keyword_span.end)};
}

std::string SentenceRecord::keyword() const {
  auto [b, e] = keyword_bytes();
  return text.substr(b, e - b);
}

json record_to_json(const SentenceRecord& r, const LabelScheme& scheme) {
  json j = {{"id", r.id},
            {"text", r.text},
            {"keyword_start", r.keyword_span.start},
            {"keyword_end", r.keyword_span.end},
            {"source", r.source},
            {"gold_label", nullptr},
            {"variant", nullptr},
            {"voice", nullptr}};
  if (r.gold_label) j["gold_label"] = scheme.name_of(*r.gold_label);
  if (r.variant) j["variant"] = std::string(to_string(*r.variant));
  if (r.voice) j["voice"] = std::string(to_string(*r.voice));
  if (!r.notes.empty()) j["notes"] = r.notes;
  return j;
}

namespace {

std::optional<KeywordSpan> locate_keyword(const std::string& text, const LabelScheme& scheme) {
  for (const auto& tok : tokenize_words(text)) {
    if (std::find(scheme.lemma_forms.begin(), scheme.lemma_forms.end(), tok.lower) !=
        scheme.lemma_forms.end()) {
      return KeywordSpan{utf8_codepoint_index(text, tok.begin),
                         utf8_codepoint_index(text, tok.end)};
    }
  }
  return std::nullopt;
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) fail(ErrorCode::kInvalidArgument, std::string(key) + " must be a string");
  return it->get<std::string>();
}

}  // namespace

void check_record(const SentenceRecord& r, const LabelScheme& scheme) {
  if (r.id.empty()) fail(ErrorCode::kInvalidArgument, "empty id");
  const std::size_t len = utf8_length(r.text);
  if (r.keyword_span.start >= r.keyword_span.end || r.keyword_span.end > len) {
    fail(ErrorCode::kInvalidArgument, "keyword span out of text bounds");
  }
  if (!scheme.lemma_forms.empty()) {
    const std::string kw = to_lower(r.keyword());
    if (std::find(scheme.lemma_forms.begin(), scheme.lemma_forms.end(), kw) ==
        scheme.lemma_forms.end()) {
      fail(ErrorCode::kInvalidArgument, "keyword span '" + r.keyword() +
                                            "' does not cover a form of the target lemma");
    }
  }
  if (r.gold_label == Label::kNegative && r.variant && *r.variant != VariantTag::kIndeterminate) {
    fail(ErrorCode::kInvalidArgument, "variant tag on a negative record must be INDETERMINATE");
  }
}

SentenceRecord record_from_json(const json& j, const LabelScheme& scheme) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "line is not a JSON object");
  SentenceRecord r;
  auto id = opt_string(j, "id");
  auto text = opt_string(j, "text");
  if (!id || id->empty()) fail(ErrorCode::kInvalidArgument, "missing id");
  if (!text) fail(ErrorCode::kInvalidArgument, "missing text");
  r.id = *id;
  r.text = *text;
  r.source = opt_string(j, "source").value_or("");
  r.notes = opt_string(j, "notes").value_or("");

  const bool has_start = j.contains("keyword_start") && !j["keyword_start"].is_null();
  const bool has_end = j.contains("keyword_end") && !j["keyword_end"].is_null();
  if (has_start != has_end) {
    fail(ErrorCode::kInvalidArgument, "keyword_start and keyword_end must be given together");
  }
  if (has_start) {
    const auto offset_ok = [](const json& v) { return v.is_number_integer() && v.get<std::int64_t>() >= 0; };
    if (!offset_ok(j["keyword_start"]) || !offset_ok(j["keyword_end"])) {
      fail(ErrorCode::kInvalidArgument, "keyword offsets must be non-negative integers");
    }
    r.keyword_span = {j["keyword_start"].get<std::size_t>(), j["keyword_end"].get<std::size_t>()};
  } else {
    auto span = locate_keyword(r.text, scheme);
    if (!span) fail(ErrorCode::kInvalidArgument, "no keyword span given and no lemma form found");
    r.keyword_span = *span;
  }

  if (auto g = opt_string(j, "gold_label")) {
    auto l = scheme.parse(*g);
    if (!l) fail(ErrorCode::kInvalidArgument, "gold_label '" + *g + "' not in label scheme");
    r.gold_label = *l;
  }
  if (auto v = opt_string(j, "variant")) {
    auto t = parse_variant(*v);
    if (!t) fail(ErrorCode::kInvalidArgument, "unknown variant '" + *v + "'");
    r.variant = *t;
  }
  if (auto v = opt_string(j, "voice")) {
    auto t = parse_voice(*v);
    if (!t) fail(ErrorCode::kInvalidArgument, "unknown voice '" + *v + "'");
    r.voice = *t;
  }
  check_record(r, scheme);
  return r;
}

bool Dataset::add(SentenceRecord r) {
  if (index_.count(r.id)) return false;
  index_.emplace(r.id, records_.size());
  records_.push_back(std::move(r));
  return true;
}

const SentenceRecord* Dataset::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const SentenceRecord& Dataset::at(const std::string& id) const {
  const auto* r = find(id);
  if (!r) fail(ErrorCode::kNotFound, "unknown record id '" + id + "'");
  return *r;
}

std::vector<std::string> Dataset::labeled_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records_) {
    if (r.gold_label) ids.push_back(r.id);
  }
  return ids;
}

json ImportSummary::to_json() const {
  json rj = json::array();
  for (const auto& r : rejects) rj.push_back({{"line", r.line}, {"id", r.id}, {"reason", r.reason}});
  return {{"imported", imported},
          {"total", total},
          {"labels", {{"positive", positive}, {"negative", negative}, {"unlabeled", unlabeled}}},
          {"rejected", rj}};
}

ImportSummary import_jsonl(std::istream& in, const LabelScheme& scheme, Dataset& dataset) {
  ImportSummary summary;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      summary.rejects.push_back({line_no, "", std::string("malformed JSON: ") + e.what()});
      continue;
    }
    SentenceRecord rec;
    try {
      rec = record_from_json(j, scheme);
    } catch (const Error& e) {
      std::string id = j.is_object() && j.contains("id") && j["id"].is_string()
                           ? j["id"].get<std::string>()
                           : "";
      summary.rejects.push_back({line_no, id, e.what()});
      continue;
    }
    if (dataset.contains(rec.id)) {
      summary.rejects.push_back({line_no, rec.id, "duplicate id '" + rec.id + "'"});
      continue;
    }
    if (!rec.gold_label) ++summary.unlabeled;
    else if (*rec.gold_label == Label::kPositive) ++summary.positive;
    else ++summary.negative;
    summary.added.push_back(rec);
    dataset.add(std::move(rec));
    ++summary.imported;
  }
  summary.total = dataset.size();
  return summary;
}

ImportSummary import_jsonl(const fs::path& path, const LabelScheme& scheme, Dataset& dataset) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  return import_jsonl(in, scheme, dataset);
}

void write_jsonl(std::ostream& out, std::span<const SentenceRecord> records,
                 const LabelScheme& scheme) {
  for (const auto& r : records) out << record_to_json(r, scheme).dump() << '\n';
}

std::size_t SplitSpec::total() const {
  std::size_t t = pretraining + supervised + evaluation;
  for (auto v : validation) t += v;
  return t;
}

json SplitSpec::to_json() const {
  return {{"pretraining", pretraining},
          {"supervised", supervised},
          {"validation", validation},
          {"evaluation", evaluation}};
}

SplitSpec SplitSpec::from_json(const json& j) {
  SplitSpec s;
  try {
    s.pretraining = j.value("pretraining", std::size_t{0});
    s.supervised = j.value("supervised", std::size_t{0});
    s.validation = j.value("validation", std::vector<std::size_t>{});
    s.evaluation = j.value("evaluation", std::size_t{0});
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed split sizes: ") + e.what());
  }
  return s;
}

std::vector<std::string> SplitPlan::all_ids() const {
  std::vector<std::string> out;
  out.insert(out.end(), pretraining_ids.begin(), pretraining_ids.end());
  out.insert(out.end(), supervised_ids.begin(), supervised_ids.end());
  for (const auto& v : validation_round_ids) out.insert(out.end(), v.begin(), v.end());
  out.insert(out.end(), evaluation_ids.begin(), evaluation_ids.end());
  return out;
}

SplitSpec SplitPlan::sizes() const {
  SplitSpec s;
  s.pretraining = pretraining_ids.size();
  s.supervised = supervised_ids.size();
  for (const auto& v : validation_round_ids) s.validation.push_back(v.size());
  s.evaluation = evaluation_ids.size();
  return s;
}

void SplitPlan::validate(const Dataset& dataset) const {
  if (evaluation_ids.empty()) fail(ErrorCode::kInvalidArgument, "evaluation split is empty");
  std::set<std::string> seen;
  for (const auto& id : all_ids()) {
    if (!seen.insert(id).second) {
      fail(ErrorCode::kInvalidArgument, "id '" + id + "' assigned to more than one split");
    }
    const auto* r = dataset.find(id);
    if (!r) fail(ErrorCode::kInvalidArgument, "plan id '" + id + "' not in dataset");
    if (!r->gold_label) fail(ErrorCode::kInvalidArgument, "plan id '" + id + "' has no gold label");
  }
}

json SplitPlan::to_json() const {
  return {{"pretraining_ids", pretraining_ids},
          {"supervised_ids", supervised_ids},
          {"validation_round_ids", validation_round_ids},
          {"evaluation_ids", evaluation_ids}};
}

SplitPlan SplitPlan::from_json(const json& j) {
  SplitPlan p;
  try {
    p.pretraining_ids = j.at("pretraining_ids").get<std::vector<std::string>>();
    p.supervised_ids = j.at("supervised_ids").get<std::vector<std::string>>();
    p.validation_round_ids =
        j.at("validation_round_ids").get<std::vector<std::vector<std::string>>>();
    p.evaluation_ids = j.at("evaluation_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed split plan: ") + e.what());
  }
  return p;
}

SplitPlan make_split_plan(const Dataset& dataset, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.evaluation == 0) fail(ErrorCode::kInvalidArgument, "evaluation split size must be > 0");
  for (auto v : spec.validation) {
    if (v == 0) fail(ErrorCode::kInvalidArgument, "validation round size must be > 0");
  }
  std::vector<std::string> ids = dataset.labeled_ids();
  if (spec.total() > ids.size()) {
    fail(ErrorCode::kInvalidArgument, "insufficient labeled data: requested " +
                                          std::to_string(spec.total()) + ", have " +
                                          std::to_string(ids.size()));
  }
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  auto it = ids.begin();
  auto take = [&](std::size_t n) {
    std::vector<std::string> out(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
    return out;
  };
  SplitPlan plan;
  plan.pretraining_ids = take(spec.pretraining);
  plan.supervised_ids = take(spec.supervised);
  for (auto v : spec.validation) plan.validation_round_ids.push_back(take(v));
  plan.evaluation_ids = take(spec.evaluation);
  return plan;
}

std::set<std::string> unseen_pool(const SplitPlan& plan, const std::set<std::string>& consumed) {
  std::set<std::string> out;
  for (auto& id : plan.all_ids()) {
    if (!consumed.count(id)) out.insert(std::move(id));
  }
  return out;
}

LabelScheme ProjectDir::load_scheme() const {
  if (!fs::exists(scheme_path())) return LabelScheme::consider_default();
  return LabelScheme::from_json(read_json_file(scheme_path()));
}

void ProjectDir::save_scheme(const LabelScheme& scheme) const {
  fs::create_directories(root_);
  write_json_file(scheme_path(), scheme.to_json());
}

Dataset ProjectDir::load_records(const LabelScheme& scheme) const {
  Dataset ds;
  if (!fs::exists(records_path())) return ds;
  auto summary = import_jsonl(records_path(), scheme, ds);
  if (!summary.rejects.empty()) {
    const auto& r = summary.rejects.front();
    fail(ErrorCode::kIo, "corrupt record store at line " + std::to_string(r.line) + ": " + r.reason);
  }
  return ds;
}

void ProjectDir::append_records(std::span<const SentenceRecord> records,
                                const LabelScheme& scheme) const {
  fs::create_directories(root_);
  std::ofstream out(records_path(), std::ios::app);
  if (!out) fail(ErrorCode::kIo, "cannot write " + records_path().string());
  write_jsonl(out, records, scheme);
  out.flush();
  if (!out) fail(ErrorCode::kIo, "write failed on " + records_path().string());
}

ProjectLock::ProjectLock(const ProjectDir& dir) {
  fs::create_directories(dir.root());
  fd_ = ::open(dir.lock_path().c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorCode::kIo, "cannot open lock file in " + dir.root().string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(ErrorCode::kConflict, "project is locked by another writer");
  }
}

ProjectLock::~ProjectLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfiguration, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace annot
