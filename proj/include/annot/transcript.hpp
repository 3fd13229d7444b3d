#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/event_log.hpp"
#include "annot/loop_engine.hpp"

namespace annot {

inline constexpr const char* kTranscriptFormat = "annot-transcript/1";

/// Header line plus the project's events after project_started.
struct Transcript {
  nlohmann::json header;
  std::vector<Event> events;

  void write_jsonl(const std::filesystem::path& path) const;
  static Transcript read_jsonl(const std::filesystem::path& path);
  std::string render_text() const;
};

Transcript make_transcript(const Project& project);

struct TranscriptFiles {
  std::filesystem::path jsonl;
  std::filesystem::path text;
};

/// Writes transcript.jsonl and transcript.txt into `out_dir`.
TranscriptFiles export_transcript(const Project& project, const std::filesystem::path& out_dir);

struct ReplayRound {
  std::string round_id;
  Phase phase = Phase::kSupervised;
  std::optional<double> original_accuracy;
  std::optional<double> replay_accuracy;
  std::optional<MetricsReport> replay_metrics;
};

struct ReplayReport {
  std::vector<ReplayRound> rounds;
  std::size_t prompts = 0;
  std::size_t identical_replies = 0;

  /// True when every replayed reply and every round accuracy match exactly.
  bool identical() const;
  const ReplayRound* find(const std::string& round_id) const;
  nlohmann::json to_json() const;
};

/// Sends every recorded prompt verbatim, in order, to fresh sessions built by
/// `factory` and re-scores each round: validation and evaluation rounds
/// against gold, supervised rounds against the recorded answers with the
/// reviewer's corrections applied.
ReplayReport replay_transcript(const Transcript& transcript, const Dataset& dataset, const LabelScheme& scheme,
                               const SessionFactory& factory);

/// Session factory for a scripted backend.
SessionFactory scripted_factory(OracleScript script, LabelScheme scheme, std::size_t context_budget);

}  // namespace annot
