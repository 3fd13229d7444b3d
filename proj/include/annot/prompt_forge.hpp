#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/corpus_store.hpp"
#include "annot/template.hpp"

namespace annot {

enum class BlockTag { kInstructions, kExamples, kExample, kItems, kItem, kThinkingDirective, kFeedback };

std::string_view tag_name(BlockTag tag);
std::optional<BlockTag> parse_tag_name(std::string_view name);
/// Upper-case block kind as used in validation messages, e.g. "THINKING_DIRECTIVE".
std::string_view block_kind(BlockTag tag);

struct Block {
  BlockTag tag = BlockTag::kInstructions;
  std::string id;  // rendered as id="..." on ITEM and FEEDBACK blocks
  std::string body;
  std::vector<Block> children;
};

enum class PromptKind { kPretraining, kBatch, kReask, kFeedback, kSummary };

std::string_view to_string(PromptKind kind);
std::optional<PromptKind> parse_prompt_kind(std::string_view s);
/// Pretraining, batch and re-ask prompts ask the model to classify.
bool is_classification(PromptKind kind);

/// Dispatch metadata that travels with a prompt but is never rendered.
struct PromptMeta {
  std::string phase;
  int round = 0;  // ordinal of the round within its phase, from 1
};

struct PromptDoc {
  PromptKind kind = PromptKind::kBatch;
  std::vector<Block> sections;
  std::string rendered;
  PromptMeta meta;

  std::vector<std::string> item_ids() const;
  std::size_t count(BlockTag tag) const;
};

std::string render_blocks(const std::vector<Block>& sections);

/// Rebuilds the block tree from rendered text (structural tags only). Throws
/// on unbalanced tags; use validate_prompt for a report instead.
PromptDoc parse_prompt(PromptKind kind, const std::string& rendered, PromptMeta meta = {});

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks the rendered text: tag balance, and for classification prompts one
/// INSTRUCTIONS block, examples, a step-by-step THINKING_DIRECTIVE and ids on
/// every item.
ValidationReport validate_prompt(const PromptDoc& doc);

/// Reviewer correction of one model answer. Throws kUnprocessable when the
/// model answer already equals the correct one.
class CorrectionNote {
 public:
  CorrectionNote(std::string record_id, Label model_answer, Label correct_answer, std::string reason);

  const std::string& record_id() const { return record_id_; }
  Label model_answer() const { return model_answer_; }
  Label correct_answer() const { return correct_answer_; }
  const std::string& reason() const { return reason_; }

  nlohmann::json to_json(const LabelScheme& scheme) const;
  static CorrectionNote from_json(const nlohmann::json& j, const LabelScheme& scheme);

 private:
  std::string record_id_;
  Label model_answer_;
  Label correct_answer_;
  std::string reason_;
};

struct Misclassification {
  const SentenceRecord* record = nullptr;
  Label model_answer = Label::kNegative;  // ignored when abstained
  bool abstained = false;
};

struct ForgeConfig {
  std::size_t batch_min = 20;
  std::size_t batch_max = 25;
  std::size_t few_shot = 4;
  std::size_t summary_examples = 10;
  double target_accuracy = 0.90;
};

class PromptForge {
 public:
  PromptForge(LabelScheme scheme, ForgeConfig config = {}, TemplateSet templates = TemplateSet::defaults());

  const LabelScheme& scheme() const { return scheme_; }
  const ForgeConfig& config() const { return config_; }

  PromptDoc render_pretraining_prompt(const std::string& task_brief,
                                      std::span<const SentenceRecord> labeled) const;
  /// Enforces 1 <= size <= max_items (config batch_max when not given).
  PromptDoc render_batch_prompt(std::span<const SentenceRecord> batch,
                                std::span<const SentenceRecord> few_shot,
                                std::optional<std::size_t> max_items = std::nullopt) const;
  PromptDoc render_reask_prompt(std::span<const SentenceRecord> items,
                                std::span<const SentenceRecord> few_shot) const;
  PromptDoc render_feedback_prompt(std::span<const CorrectionNote> corrections,
                                   const std::string& new_guidelines) const;
  PromptDoc render_summary_prompt(std::size_t correct, std::size_t total,
                                  std::span<const Misclassification> misclassified,
                                  const std::string& new_guidelines) const;

  /// First `config.few_shot / 2` records of each class, in the given order.
  std::vector<SentenceRecord> select_few_shot(std::span<const SentenceRecord> pool) const;

 private:
  std::map<std::string, std::string> scheme_values() const;
  Block example_block(const SentenceRecord& r) const;
  PromptDoc classification_doc(PromptKind kind, const std::string& instructions_template,
                               std::span<const SentenceRecord> items,
                               std::span<const SentenceRecord> few_shot) const;

  LabelScheme scheme_;
  ForgeConfig config_;
  TemplateSet templates_;
};

/// Sentence text, escaped, with the keyword wrapped in ** **.
std::string marked_sentence(const SentenceRecord& r);
std::string format_percent(double ratio, int decimals = 1);

}  // namespace annot
