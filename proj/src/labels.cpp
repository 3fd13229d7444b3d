#include "annot/labels.hpp"

#include <algorithm>
#include <cctype>

#include "annot/error.hpp"

namespace annot {

std::string_view to_string(VariantTag v) {
  switch (v) {
    case VariantTag::kBare: return "BARE";
    case VariantTag::kAs: return "AS";
    case VariantTag::kToBe: return "TO_BE";
    case VariantTag::kIndeterminate: return "INDETERMINATE";
  }
  return "INDETERMINATE";
}

std::string_view to_string(VoiceTag v) { return v == VoiceTag::kActive ? "ACTIVE" : "PASSIVE"; }

std::optional<VariantTag> parse_variant(std::string_view s) {
  if (s == "BARE") return VariantTag::kBare;
  if (s == "AS") return VariantTag::kAs;
  if (s == "TO_BE") return VariantTag::kToBe;
  if (s == "INDETERMINATE") return VariantTag::kIndeterminate;
  return std::nullopt;
}

std::optional<VoiceTag> parse_voice(std::string_view s) {
  if (s == "ACTIVE") return VoiceTag::kActive;
  if (s == "PASSIVE") return VoiceTag::kPassive;
  return std::nullopt;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  size_t b = 0;
  size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

LabelScheme LabelScheme::consider_default() {
  LabelScheme s;
  s.construction = "consider X (as) (to be) Y";
  s.positive_definition =
      "The verb introduces an evaluation, classification or judgement of something or "
      "someone within a single clause: consider X Y, consider X as Y, consider X to be Y, "
      "and their passive counterparts (X is considered (as) (to be) Y).";
  s.negative_definition =
      "Any other use of the verb, notably cognition readings such as 'take into account', "
      "'believe/think' or 'contemplate', and multiclausal uses with a that-clause "
      "(consider that ...).";
  s.lemma_forms = {"consider", "considers", "considered", "considering"};
  return s;
}

std::optional<Label> LabelScheme::parse(std::string_view s) const {
  const std::string t = to_lower(trim(s));
  if (t == to_lower(positive_name)) return Label::kPositive;
  if (t == to_lower(negative_name)) return Label::kNegative;
  return std::nullopt;
}

nlohmann::json LabelScheme::to_json() const {
  return {{"positive", positive_name},
          {"negative", negative_name},
          {"positive_definition", positive_definition},
          {"negative_definition", negative_definition},
          {"construction", construction},
          {"lemma_forms", lemma_forms}};
}

LabelScheme LabelScheme::from_json(const nlohmann::json& j) {
  LabelScheme s = consider_default();
  try {
    if (j.contains("positive")) s.positive_name = j.at("positive").get<std::string>();
    if (j.contains("negative")) s.negative_name = j.at("negative").get<std::string>();
    if (j.contains("positive_definition"))
      s.positive_definition = j.at("positive_definition").get<std::string>();
    if (j.contains("negative_definition"))
      s.negative_definition = j.at("negative_definition").get<std::string>();
    if (j.contains("construction")) s.construction = j.at("construction").get<std::string>();
    if (j.contains("lemma_forms"))
      s.lemma_forms = j.at("lemma_forms").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfiguration, std::string("malformed label scheme: ") + e.what());
  }
  if (s.positive_name.empty() || s.negative_name.empty() ||
      to_lower(s.positive_name) == to_lower(s.negative_name)) {
    fail(ErrorCode::kConfiguration, "label scheme needs two distinct non-empty label names");
  }
  for (auto& f : s.lemma_forms) f = to_lower(f);
  return s;
}

}  // namespace annot
