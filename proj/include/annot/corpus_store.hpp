#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/labels.hpp"

namespace annot {

/// Keyword location in Unicode code points, end exclusive.
struct KeywordSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const KeywordSpan&) const = default;
};

struct SentenceRecord {
  std::string id;
  std::string text;
  KeywordSpan keyword_span;
  std::string source;
  std::optional<Label> gold_label;
  std::optional<VariantTag> variant;
  std::optional<VoiceTag> voice;
  std::string notes;

  /// Keyword span converted to byte offsets into `text`.
  std::pair<std::size_t, std::size_t> keyword_bytes() const;
  std::string keyword() const;
};

std::size_t utf8_length(std::string_view s);
/// Byte offset of the code point at index `cp`; clamps to s.size().
std::size_t utf8_byte_offset(std::string_view s, std::size_t cp);
std::size_t utf8_codepoint_index(std::string_view s, std::size_t byte);

nlohmann::json record_to_json(const SentenceRecord& r, const LabelScheme& scheme);
/// Throws Error(kInvalidArgument) naming the violated field or invariant.
SentenceRecord record_from_json(const nlohmann::json& j, const LabelScheme& scheme);
/// Checks span bounds, lemma coverage and the variant/label invariant.
void check_record(const SentenceRecord& r, const LabelScheme& scheme);

class Dataset {
 public:
  /// False when the id is already present.
  bool add(SentenceRecord r);
  const SentenceRecord* find(const std::string& id) const;
  const SentenceRecord& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::span<const SentenceRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::vector<std::string> labeled_ids() const;

 private:
  std::vector<SentenceRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ImportReject {
  std::size_t line = 0;
  std::string id;
  std::string reason;
};

struct ImportSummary {
  std::size_t imported = 0;
  std::size_t total = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t unlabeled = 0;
  std::vector<ImportReject> rejects;
  std::vector<SentenceRecord> added;

  nlohmann::json to_json() const;
};

/// Line-by-line import. Malformed lines and duplicate ids are reported and
/// skipped; the import continues.
ImportSummary import_jsonl(std::istream& in, const LabelScheme& scheme, Dataset& dataset);
ImportSummary import_jsonl(const std::filesystem::path& path, const LabelScheme& scheme,
                           Dataset& dataset);

void write_jsonl(std::ostream& out, std::span<const SentenceRecord> records,
                 const LabelScheme& scheme);

struct SplitSpec {
  std::size_t pretraining = 0;
  std::size_t supervised = 0;
  std::vector<std::size_t> validation;
  std::size_t evaluation = 0;

  std::size_t total() const;
  nlohmann::json to_json() const;
  static SplitSpec from_json(const nlohmann::json& j);
};

struct SplitPlan {
  std::vector<std::string> pretraining_ids;
  std::vector<std::string> supervised_ids;
  std::vector<std::vector<std::string>> validation_round_ids;
  std::vector<std::string> evaluation_ids;

  std::vector<std::string> all_ids() const;
  SplitSpec sizes() const;
  /// Throws unless every collection is pairwise disjoint and resolves to a
  /// labeled record of `dataset`.
  void validate(const Dataset& dataset) const;

  nlohmann::json to_json() const;
  static SplitPlan from_json(const nlohmann::json& j);
};

/// Shuffles labeled ids (sorted first, so storage order is irrelevant) with a
/// seeded engine and slices them in split order.
SplitPlan make_split_plan(const Dataset& dataset, const SplitSpec& spec, std::uint64_t seed);

/// Plan ids never yet presented to the model.
std::set<std::string> unseen_pool(const SplitPlan& plan, const std::set<std::string>& consumed);

/// On-disk layout of one project: descriptor, records, plan, event log and
/// optional per-project overrides.
class ProjectDir {
 public:
  explicit ProjectDir(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path descriptor_path() const { return root_ / "project.json"; }
  std::filesystem::path records_path() const { return root_ / "records.jsonl"; }
  std::filesystem::path plan_path() const { return root_ / "plan.json"; }
  std::filesystem::path events_path() const { return root_ / "events.jsonl"; }
  std::filesystem::path script_path() const { return root_ / "script.json"; }
  std::filesystem::path scheme_path() const { return root_ / "scheme.json"; }
  std::filesystem::path templates_dir() const { return root_ / "templates"; }
  std::filesystem::path lock_path() const { return root_ / ".lock"; }

  bool exists() const { return std::filesystem::exists(root_); }
  bool started() const { return std::filesystem::exists(descriptor_path()); }

  LabelScheme load_scheme() const;
  void save_scheme(const LabelScheme& scheme) const;
  Dataset load_records(const LabelScheme& scheme) const;
  void append_records(std::span<const SentenceRecord> records, const LabelScheme& scheme) const;

 private:
  std::filesystem::path root_;
};

/// Exclusive advisory lock on a project directory (single writer).
class ProjectLock {
 public:
  explicit ProjectLock(const ProjectDir& dir);
  ~ProjectLock();
  ProjectLock(const ProjectLock&) = delete;
  ProjectLock& operator=(const ProjectLock&) = delete;

 private:
  int fd_ = -1;
};

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace annot
