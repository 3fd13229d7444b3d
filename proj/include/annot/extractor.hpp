#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/corpus_store.hpp"
#include "annot/text.hpp"

namespace annot {

struct MarkerRule {
  std::vector<std::string> words;  // lowercased, e.g. {"to", "be"}
  VariantTag tag = VariantTag::kBare;
};

/// Surface pattern of the target construction. Variant markers are tried
/// after the keyword with at most `max_gap_tokens` intervening words; when
/// none matches, a complement starting with an indeterminate cue (gerund,
/// clause opener, end of line) yields INDETERMINATE and anything else BARE.
struct PatternSpec {
  std::vector<std::string> lemma_forms;
  std::vector<MarkerRule> variant_markers;
  std::vector<std::string> passive_cues;
  std::vector<std::string> participle_forms;
  std::vector<std::string> indeterminate_cues;
  bool gerund_is_indeterminate = true;
  std::size_t max_gap_tokens = 6;
  std::size_t passive_window = 3;
  std::size_t max_line_bytes = 64 * 1024;

  static PatternSpec consider_default();
  static PatternSpec from_json(const nlohmann::json& j);
  static PatternSpec load(const std::filesystem::path& path);
  /// Throws on an empty lemma list or an empty marker.
  void validate() const;
};

struct CandidateToken {
  SentenceRecord record;
  VariantTag variant_guess = VariantTag::kIndeterminate;
  VoiceTag voice_guess = VoiceTag::kActive;
  std::size_t gap_tokens = 0;
  bool marker_found = false;
};

struct VariantGuess {
  VariantTag tag = VariantTag::kIndeterminate;
  std::size_t gap_tokens = 0;
  bool marker_found = false;
};

/// Tags the window following token `keyword_index`. Pure in the token window.
VariantGuess guess_variant(const std::vector<WordToken>& tokens, std::size_t keyword_index,
                           const PatternSpec& spec);
VoiceTag guess_voice(const std::vector<WordToken>& tokens, std::size_t keyword_index,
                     const PatternSpec& spec);

struct ScanWarning {
  std::size_t line = 0;
  std::string message;
};

struct ScanStats {
  std::size_t lines = 0;
  std::size_t candidates = 0;
  std::vector<ScanWarning> warnings;
};

using CandidateSink = std::function<void(CandidateToken&&)>;

/// Streams one candidate per lemma-form occurrence in input order. Ids are
/// "<source>:<line>:<n>" with n counting matches within the line.
ScanStats scan_kwic(std::istream& lines, const PatternSpec& spec, const std::string& source,
                    const CandidateSink& sink);
std::vector<CandidateToken> scan_kwic(std::istream& lines, const PatternSpec& spec,
                                      const std::string& source, ScanStats* stats = nullptr);

/// Plain text or gzip (detected by magic bytes).
ScanStats scan_file(const std::filesystem::path& path, const PatternSpec& spec,
                    const CandidateSink& sink);
/// Scans shards concurrently; output keeps file order.
std::vector<CandidateToken> scan_files(const std::vector<std::filesystem::path>& paths,
                                       const PatternSpec& spec, ScanStats* stats = nullptr);
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

/// Uniform without replacement; result keeps input order.
std::vector<CandidateToken> sample_random(const std::vector<CandidateToken>& candidates,
                                          std::size_t n, std::uint64_t seed);

using StratumFn = std::function<std::string(const CandidateToken&)>;

/// Exact quota per stratum; result keeps input order. Throws naming the
/// first infeasible stratum.
std::vector<CandidateToken> sample_stratified(const std::vector<CandidateToken>& candidates,
                                              const StratumFn& strata,
                                              const std::map<std::string, std::size_t>& quotas,
                                              std::uint64_t seed);

StratumFn stratify_by_variant();

/// Share of records whose gold label is positive (0 on empty input).
double positive_prevalence(const std::vector<CandidateToken>& sample);

CandidateToken candidate_from_record(SentenceRecord r);

}  // namespace annot
