#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace annot {

/// Binary target class. The positive class drives precision and recall.
enum class Label { kPositive, kNegative };

inline Label flip(Label l) { return l == Label::kPositive ? Label::kNegative : Label::kPositive; }

enum class VariantTag { kBare, kAs, kToBe, kIndeterminate };
enum class VoiceTag { kActive, kPassive };

std::string_view to_string(VariantTag v);
std::string_view to_string(VoiceTag v);
std::optional<VariantTag> parse_variant(std::string_view s);
std::optional<VoiceTag> parse_voice(std::string_view s);

/// Names the two classes of a project and the lemma forms a keyword span
/// must cover. The default scheme is the evaluative *consider* task.
struct LabelScheme {
  std::string positive_name = "EVALUATIVE";
  std::string negative_name = "NON_EVALUATIVE";
  std::string positive_definition;
  std::string negative_definition;
  std::string construction;  // human-readable pattern, e.g. "consider X (as) (to be) Y"
  std::vector<std::string> lemma_forms;

  static LabelScheme consider_default();

  const std::string& name_of(Label l) const {
    return l == Label::kPositive ? positive_name : negative_name;
  }
  /// Case-insensitive match on the scheme's label names.
  std::optional<Label> parse(std::string_view s) const;

  nlohmann::json to_json() const;
  static LabelScheme from_json(const nlohmann::json& j);
};

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace annot
