#include "annot/prompt_forge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "annot/error.hpp"
#include "annot/text.hpp"

namespace annot {

using nlohmann::json;

std::string_view tag_name(BlockTag tag) {
  switch (tag) {
    case BlockTag::kInstructions: return "instructions";
    case BlockTag::kExamples: return "examples";
    case BlockTag::kExample: return "example";
    case BlockTag::kItems: return "items";
    case BlockTag::kItem: return "item";
    case BlockTag::kThinkingDirective: return "thinking_directive";
    case BlockTag::kFeedback: return "feedback";
  }
  return "";
}

std::string_view block_kind(BlockTag tag) {
  switch (tag) {
    case BlockTag::kInstructions: return "INSTRUCTIONS";
    case BlockTag::kExamples: return "EXAMPLES";
    case BlockTag::kExample: return "EXAMPLE";
    case BlockTag::kItems: return "ITEMS";
    case BlockTag::kItem: return "ITEM";
    case BlockTag::kThinkingDirective: return "THINKING_DIRECTIVE";
    case BlockTag::kFeedback: return "FEEDBACK";
  }
  return "";
}

std::optional<BlockTag> parse_tag_name(std::string_view name) {
  for (auto t : {BlockTag::kInstructions, BlockTag::kExamples, BlockTag::kExample, BlockTag::kItems,
                 BlockTag::kItem, BlockTag::kThinkingDirective, BlockTag::kFeedback}) {
    if (tag_name(t) == name) return t;
  }
  return std::nullopt;
}

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::kPretraining: return "PRETRAINING";
    case PromptKind::kBatch: return "BATCH";
    case PromptKind::kReask: return "REASK";
    case PromptKind::kFeedback: return "FEEDBACK";
    case PromptKind::kSummary: return "SUMMARY";
  }
  return "";
}

std::optional<PromptKind> parse_prompt_kind(std::string_view s) {
  for (auto k : {PromptKind::kPretraining, PromptKind::kBatch, PromptKind::kReask,
                 PromptKind::kFeedback, PromptKind::kSummary}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

bool is_classification(PromptKind kind) {
  return kind == PromptKind::kPretraining || kind == PromptKind::kBatch || kind == PromptKind::kReask;
}

namespace {

void collect(const std::vector<Block>& blocks, BlockTag tag, std::size_t& n) {
  for (const auto& b : blocks) {
    if (b.tag == tag) ++n;
    collect(b.children, tag, n);
  }
}

void render_block(const Block& b, std::string& out) {
  out += '<';
  out += tag_name(b.tag);
  if (!b.id.empty()) {
    out += " id=\"" + xml_escape_attr(b.id) + '"';
  }
  out += ">\n";
  if (!b.body.empty()) {
    out += b.body;
    out += '\n';
  }
  for (const auto& c : b.children) render_block(c, out);
  out += "</";
  out += tag_name(b.tag);
  out += ">\n";
}

// Tags recognised inside prompts. thinking/answer only appear in instruction
// text but still have to balance.
struct TagToken {
  std::string name;
  bool closing = false;
  std::string id;
  bool has_id = false;
  std::size_t begin = 0;
  std::size_t end = 0;
};

bool known_tag(std::string_view name) {
  return parse_tag_name(name).has_value() || name == "thinking" || name == "answer";
}

std::vector<TagToken> scan_tags(const std::string& text) {
  std::vector<TagToken> out;
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string::npos) {
    std::size_t i = pos + 1;
    TagToken t;
    t.begin = pos;
    if (i < text.size() && text[i] == '/') {
      t.closing = true;
      ++i;
    }
    const std::size_t name_begin = i;
    while (i < text.size() && (std::islower(static_cast<unsigned char>(text[i])) || text[i] == '_')) ++i;
    t.name = text.substr(name_begin, i - name_begin);
    if (!known_tag(t.name)) {
      ++pos;
      continue;
    }
    bool ok = true;
    while (i < text.size() && text[i] != '>') {
      if (text[i] == ' ') {
        ++i;
        continue;
      }
      // attribute: name="value"
      const std::size_t an = i;
      while (i < text.size() && (std::islower(static_cast<unsigned char>(text[i])) || text[i] == '_')) ++i;
      const std::string attr = text.substr(an, i - an);
      if (attr.empty() || i + 1 >= text.size() || text[i] != '=' || text[i + 1] != '"' || t.closing) {
        ok = false;
        break;
      }
      i += 2;
      const auto close_quote = text.find('"', i);
      if (close_quote == std::string::npos) {
        ok = false;
        break;
      }
      if (attr == "id") {
        t.id = xml_unescape(text.substr(i, close_quote - i));
        t.has_id = true;
      }
      i = close_quote + 1;
    }
    if (!ok || i >= text.size()) {
      ++pos;
      continue;
    }
    t.end = i + 1;
    out.push_back(std::move(t));
    pos = i + 1;
  }
  return out;
}

std::vector<std::string> balance_violations(const std::vector<TagToken>& tags) {
  std::vector<std::string> violations;
  std::set<std::string> reported;
  auto report = [&](const std::string& name) {
    if (reported.insert(name).second) violations.push_back("unbalanced tag <" + name + ">");
  };
  std::vector<std::string> stack;
  for (const auto& t : tags) {
    if (!t.closing) {
      stack.push_back(t.name);
      continue;
    }
    if (!stack.empty() && stack.back() == t.name) {
      stack.pop_back();
      continue;
    }
    auto it = std::find(stack.rbegin(), stack.rend(), t.name);
    if (it == stack.rend()) {
      report(t.name);
      continue;
    }
    while (!stack.empty() && stack.back() != t.name) {
      report(stack.back());
      stack.pop_back();
    }
    stack.pop_back();
  }
  for (const auto& s : stack) report(s);
  return violations;
}

std::string trim_newlines(std::string s) {
  std::size_t b = 0;
  while (b < s.size() && (s[b] == '\n' || s[b] == '\r')) ++b;
  std::size_t e = s.size();
  while (e > b && (s[e - 1] == '\n' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

// Builds blocks from structural tags in [first, last) assuming balance.
std::vector<Block> build_blocks(const std::string& text, const std::vector<TagToken>& tags,
                                std::size_t first, std::size_t last) {
  std::vector<Block> out;
  std::size_t i = first;
  while (i < last) {
    const auto& open = tags[i];
    auto tag = parse_tag_name(open.name);
    if (open.closing || !tag) {
      ++i;
      continue;
    }
    int depth = 0;
    std::size_t j = i;
    for (; j < last; ++j) {
      if (tags[j].name != open.name) continue;
      depth += tags[j].closing ? -1 : 1;
      if (depth == 0) break;
    }
    if (j >= last) break;
    Block b;
    b.tag = *tag;
    b.id = open.id;
    if (b.tag != BlockTag::kExamples && b.tag != BlockTag::kItems) {
      b.body = trim_newlines(text.substr(open.end, tags[j].begin - open.end));
      out.push_back(std::move(b));
      i = j + 1;
      continue;
    }
    b.children = build_blocks(text, tags, i + 1, j);
    // Body is the text directly inside this block, excluding child blocks.
    std::string body;
    std::size_t cursor = open.end;
    std::size_t k = i + 1;
    while (k < j) {
      const auto& t = tags[k];
      if (t.closing || !parse_tag_name(t.name)) {
        ++k;
        continue;
      }
      int d = 0;
      std::size_t m = k;
      for (; m < j; ++m) {
        if (tags[m].name != t.name) continue;
        d += tags[m].closing ? -1 : 1;
        if (d == 0) break;
      }
      body += text.substr(cursor, t.begin - cursor);
      cursor = tags[m].end;
      k = m + 1;
    }
    body += text.substr(cursor, tags[j].begin - cursor);
    b.body = trim_newlines(body);
    out.push_back(std::move(b));
    i = j + 1;
  }
  return out;
}

bool contains_ci(const std::string& haystack, std::string_view needle) {
  return to_lower(haystack).find(needle) != std::string::npos;
}

}  // namespace

std::vector<std::string> PromptDoc::item_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : sections) {
    if (s.tag != BlockTag::kItems) continue;
    for (const auto& c : s.children) {
      if (c.tag == BlockTag::kItem) ids.push_back(c.id);
    }
  }
  return ids;
}

std::size_t PromptDoc::count(BlockTag tag) const {
  std::size_t n = 0;
  collect(sections, tag, n);
  return n;
}

std::string render_blocks(const std::vector<Block>& sections) {
  std::string out;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (i) out += '\n';
    render_block(sections[i], out);
  }
  return out;
}

PromptDoc parse_prompt(PromptKind kind, const std::string& rendered, PromptMeta meta) {
  const auto tags = scan_tags(rendered);
  const auto bad = balance_violations(tags);
  if (!bad.empty()) fail(ErrorCode::kInvalidArgument, "cannot parse prompt: " + bad.front());
  PromptDoc doc;
  doc.kind = kind;
  doc.rendered = rendered;
  doc.meta = std::move(meta);
  doc.sections = build_blocks(rendered, tags, 0, tags.size());
  return doc;
}

ValidationReport validate_prompt(const PromptDoc& doc) {
  ValidationReport report;
  const auto tags = scan_tags(doc.rendered);
  report.violations = balance_violations(tags);
  if (!report.ok()) return report;

  const auto top = build_blocks(doc.rendered, tags, 0, tags.size());
  auto top_count = [&](BlockTag t) {
    return std::count_if(top.begin(), top.end(), [&](const Block& b) { return b.tag == t; });
  };
  auto& v = report.violations;

  const auto n_instr = top_count(BlockTag::kInstructions);
  if (n_instr == 0) v.push_back("missing INSTRUCTIONS");
  if (n_instr > 1) v.push_back("more than one INSTRUCTIONS block");

  if (is_classification(doc.kind)) {
    const auto directive = std::find_if(top.begin(), top.end(), [](const Block& b) {
      return b.tag == BlockTag::kThinkingDirective;
    });
    if (directive == top.end() || !contains_ci(directive->body, "think step by step")) {
      v.push_back("missing THINKING_DIRECTIVE");
    }
    if (top_count(BlockTag::kThinkingDirective) > 1) v.push_back("more than one THINKING_DIRECTIVE block");

    std::size_t examples = 0;
    for (const auto& b : top) {
      if (b.tag != BlockTag::kExamples) continue;
      for (const auto& c : b.children) examples += c.tag == BlockTag::kExample;
    }
    if (examples == 0) v.push_back("missing examples");
  }

  if (doc.kind == PromptKind::kBatch || doc.kind == PromptKind::kReask) {
    std::size_t items = 0;
    std::set<std::string> ids;
    for (const auto& b : top) {
      if (b.tag != BlockTag::kItems) continue;
      for (const auto& c : b.children) {
        if (c.tag != BlockTag::kItem) continue;
        ++items;
        if (c.id.empty()) v.push_back("item without id");
        else if (!ids.insert(c.id).second) v.push_back("duplicate item id '" + c.id + "'");
      }
    }
    if (items == 0) v.push_back("missing ITEMS");
  }
  if (doc.kind == PromptKind::kFeedback || doc.kind == PromptKind::kSummary) {
    for (const auto& b : top) {
      if (b.tag == BlockTag::kFeedback && b.id.empty()) v.push_back("feedback without id");
    }
  }
  return report;
}

CorrectionNote::CorrectionNote(std::string record_id, Label model_answer, Label correct_answer,
                               std::string reason)
    : record_id_(std::move(record_id)),
      model_answer_(model_answer),
      correct_answer_(correct_answer),
      reason_(std::move(reason)) {
  if (record_id_.empty()) fail(ErrorCode::kUnprocessable, "correction without record id");
  if (model_answer_ == correct_answer_) {
    fail(ErrorCode::kUnprocessable,
         "correction for '" + record_id_ + "' repeats the model's answer");
  }
}

json CorrectionNote::to_json(const LabelScheme& scheme) const {
  return {{"id", record_id_},
          {"model_answer", scheme.name_of(model_answer_)},
          {"correct_answer", scheme.name_of(correct_answer_)},
          {"reason", reason_}};
}

CorrectionNote CorrectionNote::from_json(const json& j, const LabelScheme& scheme) {
  try {
    const auto id = j.at("id").get<std::string>();
    auto model = scheme.parse(j.at("model_answer").get<std::string>());
    auto correct = scheme.parse(j.at("correct_answer").get<std::string>());
    if (!model || !correct) fail(ErrorCode::kUnprocessable, "correction label not in scheme for '" + id + "'");
    return CorrectionNote(id, *model, *correct, j.value("reason", std::string{}));
  } catch (const json::exception& e) {
    fail(ErrorCode::kUnprocessable, std::string("malformed correction: ") + e.what());
  }
}

std::string marked_sentence(const SentenceRecord& r) {
  auto [b, e] = r.keyword_bytes();
  if (b >= e) return xml_escape(r.text);
  return xml_escape(r.text.substr(0, b)) + "**" + xml_escape(r.text.substr(b, e - b)) + "**" +
         xml_escape(r.text.substr(e));
}

std::string format_percent(double ratio, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f%%", decimals, ratio * 100.0);
  return buf;
}

PromptForge::PromptForge(LabelScheme scheme, ForgeConfig config, TemplateSet templates)
    : scheme_(std::move(scheme)), config_(config), templates_(std::move(templates)) {
  if (config_.batch_max == 0 || config_.batch_min > config_.batch_max) {
    fail(ErrorCode::kConfiguration, "batch bounds must satisfy 0 < min <= max");
  }
}

std::map<std::string, std::string> PromptForge::scheme_values() const {
  return {{"positive", scheme_.positive_name},
          {"negative", scheme_.negative_name},
          {"positive_definition", scheme_.positive_definition},
          {"negative_definition", scheme_.negative_definition},
          {"construction", scheme_.construction},
          {"target", format_percent(config_.target_accuracy, 0)}};
}

Block PromptForge::example_block(const SentenceRecord& r) const {
  Block b;
  b.tag = BlockTag::kExample;
  b.body = "Sentence: " + marked_sentence(r) + "\nLabel: " + scheme_.name_of(*r.gold_label);
  return b;
}

PromptDoc PromptForge::render_pretraining_prompt(const std::string& task_brief,
                                                 std::span<const SentenceRecord> labeled) const {
  if (labeled.empty()) fail(ErrorCode::kInvalidArgument, "pretraining needs at least one labeled record");
  for (const auto& r : labeled) {
    if (!r.gold_label) fail(ErrorCode::kInvalidArgument, "pretraining record '" + r.id + "' has no gold label");
  }
  auto values = scheme_values();
  values["task_brief"] = task_brief;
  values["count"] = std::to_string(labeled.size());

  PromptDoc doc;
  doc.kind = PromptKind::kPretraining;
  doc.sections.push_back({BlockTag::kInstructions, "", templates_.get("pretraining_instructions").render(values), {}});
  Block examples{BlockTag::kExamples, "", "", {}};
  for (const auto& r : labeled) examples.children.push_back(example_block(r));
  doc.sections.push_back(std::move(examples));
  doc.sections.push_back({BlockTag::kThinkingDirective, "", templates_.get("pretraining_thinking").render(values), {}});
  doc.rendered = render_blocks(doc.sections);
  return doc;
}

PromptDoc PromptForge::classification_doc(PromptKind kind, const std::string& instructions_template,
                                          std::span<const SentenceRecord> items,
                                          std::span<const SentenceRecord> few_shot) const {
  if (few_shot.empty()) fail(ErrorCode::kInvalidArgument, "classification prompts need at least one example");
  auto values = scheme_values();
  values["count"] = std::to_string(items.size());

  PromptDoc doc;
  doc.kind = kind;
  doc.sections.push_back({BlockTag::kInstructions, "", templates_.get(instructions_template).render(values), {}});
  Block examples{BlockTag::kExamples, "", "", {}};
  for (const auto& r : few_shot) {
    if (!r.gold_label) fail(ErrorCode::kInvalidArgument, "few-shot record '" + r.id + "' has no gold label");
    examples.children.push_back(example_block(r));
  }
  doc.sections.push_back(std::move(examples));
  doc.sections.push_back({BlockTag::kThinkingDirective, "", templates_.get("batch_thinking").render(values), {}});
  Block block{BlockTag::kItems, "", "", {}};
  std::set<std::string> seen;
  for (const auto& r : items) {
    if (!seen.insert(r.id).second) fail(ErrorCode::kInvalidArgument, "duplicate item '" + r.id + "' in batch");
    block.children.push_back({BlockTag::kItem, r.id, marked_sentence(r), {}});
  }
  doc.sections.push_back(std::move(block));
  doc.rendered = render_blocks(doc.sections);
  return doc;
}

PromptDoc PromptForge::render_batch_prompt(std::span<const SentenceRecord> batch,
                                           std::span<const SentenceRecord> few_shot,
                                           std::optional<std::size_t> max_items) const {
  if (batch.empty()) fail(ErrorCode::kInvalidArgument, "empty batch");
  const std::size_t limit = max_items.value_or(config_.batch_max);
  if (batch.size() > limit) {
    fail(ErrorCode::kInvalidArgument, "batch of " + std::to_string(batch.size()) +
                                          " exceeds size bound " + std::to_string(limit));
  }
  return classification_doc(PromptKind::kBatch, "batch_instructions", batch, few_shot);
}

PromptDoc PromptForge::render_reask_prompt(std::span<const SentenceRecord> items,
                                           std::span<const SentenceRecord> few_shot) const {
  if (items.empty()) fail(ErrorCode::kInvalidArgument, "nothing to re-ask");
  return classification_doc(PromptKind::kReask, "reask_instructions", items, few_shot);
}

namespace {

std::string guidelines_suffix(const std::string& g) {
  const std::string t = trim(g);
  return t.empty() ? "" : "\n\nAdditional guidelines:\n" + xml_escape(t);
}

}  // namespace

PromptDoc PromptForge::render_feedback_prompt(std::span<const CorrectionNote> corrections,
                                              const std::string& new_guidelines) const {
  std::map<std::string, std::string> values = scheme_values();
  values["count"] = std::to_string(corrections.size());
  values["guidelines"] = guidelines_suffix(new_guidelines);

  PromptDoc doc;
  doc.kind = PromptKind::kFeedback;
  const char* tmpl = corrections.empty() ? "feedback_all_correct" : "feedback_instructions";
  doc.sections.push_back({BlockTag::kInstructions, "", templates_.get(tmpl).render(values), {}});
  for (const auto& c : corrections) {
    std::string body = "Your answer: " + scheme_.name_of(c.model_answer()) +
                       "\nCorrect answer: " + scheme_.name_of(c.correct_answer());
    if (!trim(c.reason()).empty()) body += "\nReason: " + xml_escape(trim(c.reason()));
    doc.sections.push_back({BlockTag::kFeedback, c.record_id(), std::move(body), {}});
  }
  doc.rendered = render_blocks(doc.sections);
  return doc;
}

PromptDoc PromptForge::render_summary_prompt(std::size_t correct, std::size_t total,
                                             std::span<const Misclassification> misclassified,
                                             const std::string& new_guidelines) const {
  if (total == 0) fail(ErrorCode::kInvalidArgument, "summary of an empty round");
  const std::size_t shown = std::min(misclassified.size(), config_.summary_examples);
  std::map<std::string, std::string> values = scheme_values();
  values["accuracy"] = format_percent(static_cast<double>(correct) / static_cast<double>(total));
  values["correct"] = std::to_string(correct);
  values["total"] = std::to_string(total);
  values["misclassified"] = std::to_string(misclassified.size());
  values["shown"] = shown == 0 ? "" : "; " + std::to_string(shown) + " of them are shown below";
  values["guidelines"] = guidelines_suffix(new_guidelines);

  PromptDoc doc;
  doc.kind = PromptKind::kSummary;
  doc.sections.push_back({BlockTag::kInstructions, "", templates_.get("summary_instructions").render(values), {}});
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& m = misclassified[i];
    std::string body = "Sentence: " + marked_sentence(*m.record) + "\nYour answer: " +
                       (m.abstained ? std::string("none") : scheme_.name_of(m.model_answer)) +
                       "\nCorrect answer: " + scheme_.name_of(*m.record->gold_label);
    doc.sections.push_back({BlockTag::kFeedback, m.record->id, std::move(body), {}});
  }
  doc.rendered = render_blocks(doc.sections);
  return doc;
}

std::vector<SentenceRecord> PromptForge::select_few_shot(std::span<const SentenceRecord> pool) const {
  const std::size_t per_class = std::max<std::size_t>(1, config_.few_shot / 2);
  std::size_t pos = 0;
  std::size_t neg = 0;
  std::vector<SentenceRecord> out;
  for (const auto& r : pool) {
    if (!r.gold_label) continue;
    auto& n = *r.gold_label == Label::kPositive ? pos : neg;
    if (n < per_class) {
      ++n;
      out.push_back(r);
    }
    if (pos == per_class && neg == per_class) break;
  }
  return out;
}

}  // namespace annot
