#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/labels.hpp"
#include "annot/prompt_forge.hpp"

namespace annot {

enum class BackendKind { kRemote, kScripted };

std::string_view to_string(BackendKind kind);
std::optional<BackendKind> parse_backend_kind(std::string_view s);

/// One prompt/reply exchange, in conversation order.
struct Turn {
  PromptKind kind = PromptKind::kBatch;
  PromptMeta meta;
  std::string prompt;
  std::string reply;
};

/// Produces the reply to `prompt` given the full prior history of a session.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const std::vector<Turn>& history, const PromptDoc& prompt) = 0;
};

/// Error schedule of one round: either a rate over the round's items or exact
/// per-class error counts. `abstain` items get no answer block.
struct RoundSchedule {
  std::optional<double> error_rate;
  std::optional<std::size_t> false_positives;
  std::optional<std::size_t> false_negatives;
  std::size_t abstain = 0;

  nlohmann::json to_json() const;
  static RoundSchedule from_json(const nlohmann::json& j);
};

/// Deterministic stand-in for a remote model.
struct OracleScript {
  std::map<std::string, Label> gold;
  std::uint64_t seed = 0;
  /// phase name -> per-round schedules; the last entry repeats, a missing
  /// phase answers perfectly.
  std::map<std::string, std::vector<RoundSchedule>> rounds;
  std::string comments = "I have read the classified examples. Should sentences whose complement "
                         "is a gerund clause count as evaluative?";

  void validate() const;
  RoundSchedule schedule_for(const std::string& phase, int round) const;

  nlohmann::json to_json(const LabelScheme& scheme) const;
  static OracleScript from_json(const nlohmann::json& j, const LabelScheme& scheme);
};

/// Delays between retries of transient failures.
struct RetryPolicy {
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(4),
                                                 std::chrono::seconds(16)};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

struct RemoteConfig {
  std::string url;  // full chat-completions URL, http:// or https://
  std::string model;
  std::string api_key_env = "ANNOT_API_KEY";
  std::string system_prompt;
  int max_tokens = 8192;
  std::chrono::seconds timeout{300};
  RetryPolicy retry;
};

struct SessionConfig {
  BackendKind kind = BackendKind::kScripted;
  std::string session_id;
  RemoteConfig remote;
  std::optional<OracleScript> script;
  LabelScheme scheme = LabelScheme::consider_default();
  std::size_t context_budget = 180'000;  // characters of retained prompt + reply text
};

class Session {
 public:
  Session(std::string id, BackendKind kind, std::unique_ptr<ChatBackend> backend,
          std::size_t context_budget);

  const std::string& id() const { return id_; }
  BackendKind backend_kind() const { return kind_; }
  std::size_t context_budget() const { return budget_; }
  std::vector<Turn> history() const;
  std::size_t history_chars() const;

  /// Rejects prompts failing validate_prompt and prompts that would exceed
  /// the context budget; otherwise dispatches and appends the turn.
  std::string send(const PromptDoc& doc);
  /// Appends a recorded turn without dispatching (rebuilding from a log).
  void restore(Turn turn);

 private:
  std::string id_;
  BackendKind kind_;
  std::unique_ptr<ChatBackend> backend_;
  std::size_t budget_;
  mutable std::mutex mu_;
  std::vector<Turn> history_;
  std::size_t chars_ = 0;
};

/// Throws kConfiguration on a missing credential or malformed script.
std::unique_ptr<Session> open_session(const SessionConfig& config);

std::unique_ptr<ChatBackend> make_scripted_backend(OracleScript script, LabelScheme scheme);
std::unique_ptr<ChatBackend> make_remote_backend(RemoteConfig config, std::string api_key);

struct ParsedEntry {
  std::string record_id;
  Label answer = Label::kNegative;
  std::string thinking;
};

struct ParsedClassifications {
  std::vector<ParsedEntry> entries;  // in expected-id order
  std::string model_comments;
  std::vector<std::string> unparsed_ids;

  const ParsedEntry* find(const std::string& id) const;
  nlohmann::json to_json(const LabelScheme& scheme) const;
  static ParsedClassifications from_json(const nlohmann::json& j, const LabelScheme& scheme);
};

/// Matches `<item id="..."> ... <answer>LABEL</answer> ... </item>` blocks
/// to expected ids. Missing, unknown-label and conflicting answers end up in
/// unparsed_ids; text outside item blocks becomes model_comments.
ParsedClassifications parse_reply(const std::string& raw, const std::vector<std::string>& expected_ids,
                                  const LabelScheme& scheme);

}  // namespace annot
