#include "annot/extractor.hpp"

#include <glob.h>
#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <future>
#include <istream>
#include <random>
#include <sstream>

#include "annot/error.hpp"

namespace annot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  for (auto& t : tokenize_words(s)) out.push_back(std::move(t.lower));
  return out;
}

}  // namespace

PatternSpec PatternSpec::consider_default() {
  PatternSpec s;
  s.lemma_forms = {"consider", "considers", "considered", "considering"};
  s.variant_markers = {{{"as"}, VariantTag::kAs}, {{"to", "be"}, VariantTag::kToBe}};
  s.passive_cues = {"be",   "is",  "are",  "was",    "were",  "been", "being", "am",
                    "get",  "gets", "got", "gotten", "getting", "'s", "'re"};
  s.participle_forms = {"considered"};
  s.indeterminate_cues = {"that", "whether", "if",  "how",   "what",  "why",
                          "when", "where",   "who", "which", "about"};
  return s;
}

void PatternSpec::validate() const {
  if (lemma_forms.empty()) fail(ErrorCode::kInvalidArgument, "pattern needs at least one lemma form");
  for (const auto& m : variant_markers) {
    if (m.words.empty()) fail(ErrorCode::kInvalidArgument, "empty variant marker");
  }
}

PatternSpec PatternSpec::from_json(const json& j) {
  PatternSpec s = consider_default();
  try {
    if (j.contains("lemma_forms")) {
      s.lemma_forms.clear();
      for (const auto& f : j["lemma_forms"]) s.lemma_forms.push_back(to_lower(f.get<std::string>()));
    }
    if (j.contains("variant_markers")) {
      s.variant_markers.clear();
      for (const auto& m : j["variant_markers"]) {
        MarkerRule rule;
        rule.words = split_words(m.at("marker").get<std::string>());
        const auto tag = m.at("variant").get<std::string>();
        auto parsed = parse_variant(tag);
        if (!parsed) fail(ErrorCode::kInvalidArgument, "unknown variant '" + tag + "' in pattern");
        rule.tag = *parsed;
        s.variant_markers.push_back(std::move(rule));
      }
    }
    auto lower_list = [&](const char* key, std::vector<std::string>& dst) {
      if (!j.contains(key)) return;
      dst.clear();
      for (const auto& f : j[key]) dst.push_back(to_lower(f.get<std::string>()));
    };
    lower_list("passive_cues", s.passive_cues);
    lower_list("participle_forms", s.participle_forms);
    lower_list("indeterminate_cues", s.indeterminate_cues);
    s.gerund_is_indeterminate = j.value("gerund_is_indeterminate", s.gerund_is_indeterminate);
    if (j.contains("max_gap_tokens")) {
      if (!j["max_gap_tokens"].is_number_unsigned()) {
        fail(ErrorCode::kInvalidArgument, "max_gap_tokens must be a non-negative integer");
      }
      s.max_gap_tokens = j["max_gap_tokens"].get<std::size_t>();
    }
    s.passive_window = j.value("passive_window", s.passive_window);
    s.max_line_bytes = j.value("max_line_bytes", s.max_line_bytes);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed pattern: ") + e.what());
  }
  s.validate();
  return s;
}

PatternSpec PatternSpec::load(const fs::path& path) { return from_json(read_json_file(path)); }

VariantGuess guess_variant(const std::vector<WordToken>& tokens, std::size_t keyword_index,
                           const PatternSpec& spec) {
  const std::size_t first = keyword_index + 1;
  for (std::size_t gap = 0; gap <= spec.max_gap_tokens; ++gap) {
    const std::size_t pos = first + gap;
    if (pos >= tokens.size() || tokens[pos].break_before) break;
    for (const auto& rule : spec.variant_markers) {
      if (pos + rule.words.size() > tokens.size()) continue;
      bool match = true;
      for (std::size_t w = 0; w < rule.words.size() && match; ++w) {
        match = tokens[pos + w].lower == rule.words[w] && (w == 0 || !tokens[pos + w].break_before);
      }
      if (match) return {rule.tag, gap, true};
    }
  }
  if (first >= tokens.size() || tokens[first].break_before) return {VariantTag::kIndeterminate, 0, false};
  const std::string& next = tokens[first].lower;
  if (contains(spec.indeterminate_cues, next)) return {VariantTag::kIndeterminate, 0, false};
  if (spec.gerund_is_indeterminate && next.size() > 4 && next.ends_with("ing")) {
    return {VariantTag::kIndeterminate, 0, false};
  }
  return {VariantTag::kBare, 0, false};
}

VoiceTag guess_voice(const std::vector<WordToken>& tokens, std::size_t keyword_index,
                     const PatternSpec& spec) {
  if (!contains(spec.participle_forms, tokens[keyword_index].lower)) return VoiceTag::kActive;
  for (std::size_t back = 1; back <= spec.passive_window && back <= keyword_index; ++back) {
    if (tokens[keyword_index - back + 1].break_before) break;
    const std::string& w = tokens[keyword_index - back].lower;
    if (contains(spec.passive_cues, w)) return VoiceTag::kPassive;
    // Contracted auxiliaries ("it's", "they're") match cues like "'s".
    const auto apos = w.rfind('\'');
    if (apos != std::string::npos && contains(spec.passive_cues, w.substr(apos))) {
      return VoiceTag::kPassive;
    }
  }
  return VoiceTag::kActive;
}

namespace {

template <typename NextLine>
ScanStats scan_lines(NextLine&& next_line, const PatternSpec& spec, const std::string& source,
                     const CandidateSink& sink) {
  ScanStats stats;
  std::string line;
  while (next_line(line)) {
    ++stats.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() > spec.max_line_bytes) {
      stats.warnings.push_back({stats.lines, "line exceeds " + std::to_string(spec.max_line_bytes) +
                                                 " bytes; skipped"});
      continue;
    }
    const auto tokens = tokenize_words(line);
    std::size_t match_no = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!contains(spec.lemma_forms, tokens[i].lower)) continue;
      CandidateToken c;
      const auto v = guess_variant(tokens, i, spec);
      c.variant_guess = v.tag;
      c.gap_tokens = v.gap_tokens;
      c.marker_found = v.marker_found;
      c.voice_guess = guess_voice(tokens, i, spec);
      auto& r = c.record;
      r.id = source + ":" + std::to_string(stats.lines) + ":" + std::to_string(match_no++);
      r.text = line;
      r.keyword_span = {utf8_codepoint_index(line, tokens[i].begin),
                        utf8_codepoint_index(line, tokens[i].end)};
      r.source = source + ":" + std::to_string(stats.lines);
      r.variant = c.variant_guess;
      r.voice = c.voice_guess;
      ++stats.candidates;
      sink(std::move(c));
    }
  }
  return stats;
}

class GzLineReader {
 public:
  explicit GzLineReader(const fs::path& path) : file_(gzopen(path.c_str(), "rb")) {
    if (!file_) fail(ErrorCode::kIo, "cannot open " + path.string());
  }
  ~GzLineReader() {
    if (file_) gzclose(file_);
  }
  GzLineReader(const GzLineReader&) = delete;
  GzLineReader& operator=(const GzLineReader&) = delete;

  bool operator()(std::string& line) {
    line.clear();
    char buf[8192];
    bool any = false;
    while (gzgets(file_, buf, sizeof buf) != nullptr) {
      any = true;
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        return true;
      }
    }
    return any;
  }

 private:
  gzFile file_;
};

bool is_gzip(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char magic[2] = {0, 0};
  in.read(reinterpret_cast<char*>(magic), 2);
  return in.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
}

}  // namespace

ScanStats scan_kwic(std::istream& lines, const PatternSpec& spec, const std::string& source,
                    const CandidateSink& sink) {
  spec.validate();
  return scan_lines([&](std::string& line) { return static_cast<bool>(std::getline(lines, line)); },
                    spec, source, sink);
}

std::vector<CandidateToken> scan_kwic(std::istream& lines, const PatternSpec& spec,
                                      const std::string& source, ScanStats* stats) {
  std::vector<CandidateToken> out;
  auto s = scan_kwic(lines, spec, source, [&](CandidateToken&& c) { out.push_back(std::move(c)); });
  if (stats) *stats = std::move(s);
  return out;
}

ScanStats scan_file(const fs::path& path, const PatternSpec& spec, const CandidateSink& sink) {
  spec.validate();
  const std::string source = path.filename().string();
  if (is_gzip(path)) {
    GzLineReader reader(path);
    return scan_lines(reader, spec, source, sink);
  }
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return scan_kwic(in, spec, source, sink);
}

std::vector<CandidateToken> scan_files(const std::vector<fs::path>& paths, const PatternSpec& spec,
                                       ScanStats* stats) {
  using Shard = std::pair<std::vector<CandidateToken>, ScanStats>;
  std::vector<std::future<Shard>> shards;
  shards.reserve(paths.size());
  for (const auto& p : paths) {
    shards.push_back(std::async(std::launch::async, [&spec, p] {
      Shard s;
      s.second = scan_file(p, spec, [&](CandidateToken&& c) { s.first.push_back(std::move(c)); });
      return s;
    }));
  }
  std::vector<CandidateToken> out;
  ScanStats total;
  for (auto& f : shards) {
    auto [cands, st] = f.get();
    for (auto& w : st.warnings) total.warnings.push_back(std::move(w));
    total.lines += st.lines;
    total.candidates += st.candidates;
    std::move(cands.begin(), cands.end(), std::back_inserter(out));
  }
  if (stats) *stats = std::move(total);
  return out;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) fail(ErrorCode::kIo, "glob failed for '" + pattern + "'");
  return out;
}

std::vector<CandidateToken> sample_random(const std::vector<CandidateToken>& candidates,
                                          std::size_t n, std::uint64_t seed) {
  if (n > candidates.size()) {
    fail(ErrorCode::kInvalidArgument, "sample size " + std::to_string(n) + " exceeds population " +
                                          std::to_string(candidates.size()));
  }
  std::vector<CandidateToken> out;
  out.reserve(n);
  std::mt19937_64 rng(seed);
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(out), n, rng);
  return out;
}

std::vector<CandidateToken> sample_stratified(const std::vector<CandidateToken>& candidates,
                                              const StratumFn& strata,
                                              const std::map<std::string, std::size_t>& quotas,
                                              std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < candidates.size(); ++i) members[strata(candidates[i])].push_back(i);
  for (const auto& [name, quota] : quotas) {
    const std::size_t have = members.count(name) ? members[name].size() : 0;
    if (quota > have) {
      fail(ErrorCode::kInvalidArgument, "quota infeasible for stratum " + name + ": need " +
                                            std::to_string(quota) + ", have " +
                                            std::to_string(have));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  for (const auto& [name, quota] : quotas) {
    std::sample(members[name].begin(), members[name].end(), std::back_inserter(picked), quota, rng);
  }
  std::sort(picked.begin(), picked.end());
  std::vector<CandidateToken> out;
  out.reserve(picked.size());
  for (auto i : picked) out.push_back(candidates[i]);
  return out;
}

StratumFn stratify_by_variant() {
  return [](const CandidateToken& c) { return std::string(to_string(c.variant_guess)); };
}

double positive_prevalence(const std::vector<CandidateToken>& sample) {
  if (sample.empty()) return 0.0;
  const auto pos = std::count_if(sample.begin(), sample.end(), [](const CandidateToken& c) {
    return c.record.gold_label == Label::kPositive;
  });
  return static_cast<double>(pos) / static_cast<double>(sample.size());
}

CandidateToken candidate_from_record(SentenceRecord r) {
  CandidateToken c;
  c.variant_guess = r.variant.value_or(VariantTag::kIndeterminate);
  c.voice_guess = r.voice.value_or(VoiceTag::kActive);
  c.record = std::move(r);
  return c;
}

}  // namespace annot
