#include "annot/template.hpp"

#include <fstream>
#include <sstream>

#include "annot/error.hpp"

namespace annot {

namespace fs = std::filesystem;

Template::Template(std::string text) : text_(std::move(text)) {
  std::size_t pos = 0;
  while ((pos = text_.find("{{", pos)) != std::string::npos) {
    const auto end = text_.find("}}", pos + 2);
    if (end == std::string::npos) fail(ErrorCode::kConfiguration, "unterminated placeholder in template");
    placeholders_.push_back(text_.substr(pos + 2, end - pos - 2));
    pos = end + 2;
  }
}

std::string Template::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  out.reserve(text_.size());
  std::size_t pos = 0;
  while (true) {
    const auto open = text_.find("{{", pos);
    if (open == std::string::npos) {
      out.append(text_, pos, std::string::npos);
      break;
    }
    const auto close = text_.find("}}", open + 2);
    out.append(text_, pos, open - pos);
    const std::string name = text_.substr(open + 2, close - open - 2);
    auto it = values.find(name);
    if (it == values.end()) fail(ErrorCode::kConfiguration, "no value for template placeholder '" + name + "'");
    out += it->second;
    pos = close + 2;
  }
  return out;
}

namespace {

const char* kPretrainingInstructions =
    R"(Task: {{task_brief}}

You will help a linguist annotate corpus sentences containing the verb form marked with ** **. Each sentence belongs to exactly one of two classes:

{{positive}}: {{positive_definition}}
{{negative}}: {{negative_definition}}

Below are {{count}} sentences that have already been classified by the linguist, each in an example block. Proceed as follows:
1. Read each example and locate the marked verb.
2. Work out which criteria explain why it received its label.
3. Note edge cases, such as material intervening between the verb and its complement, passives, and ambiguous sentences.
4. Summarise the decision criteria you would apply to new sentences.

Later you will classify unseen sentences in batches, answering with exactly one of the labels {{positive}} or {{negative}} per sentence. Your answers will be compared with the linguist's annotation, and the task is successful once you reach an accuracy of {{target}} or better on unseen data.

Please ask questions and make comments about anything in the classification that is unclear to you.)";

const char* kPretrainingThinking =
    R"(Think step by step about how each example has been classified, and about whether you would have classified it in the same manner given these instructions. Write your reasoning inside <thinking> </thinking> before giving your summary.)";

const char* kBatchInstructions =
    R"(Classify each of the {{count}} sentences in the items block. The verb form to judge is marked with ** **.

{{positive}}: {{positive_definition}}
{{negative}}: {{negative_definition}}

Steps:
1. Read the sentence and locate the marked verb.
2. Decide whether this use instantiates the construction "{{construction}}".
3. Give exactly one label per sentence. The only allowed answers are {{positive}} and {{negative}}.

Reply with one block per item and keep its id:
<item id="ID">
<thinking>your step-by-step reasoning</thinking>
<answer>{{positive}} or {{negative}}</answer>
</item>

Your answers will be compared with the linguist's annotation; the target is {{target}} accuracy. You may add questions or comments after the last item.)";

const char* kReaskInstructions =
    R"(Your previous reply did not contain a readable answer for the {{count}} sentences in the items block. Classify them again, using exactly one of the labels {{positive}} or {{negative}} per sentence.

Reply with one block per item and keep its id:
<item id="ID">
<thinking>your step-by-step reasoning</thinking>
<answer>{{positive}} or {{negative}}</answer>
</item>)";

const char* kBatchThinking =
    R"(Think step by step before each answer: write your reasoning inside <thinking> </thinking>, then give the label inside <answer> </answer>.)";

const char* kFeedbackInstructions =
    R"(Feedback on your last batch: {{count}} of your classifications were wrong. Each one is listed below in a feedback block with your answer, the correct answer and the reason. Use this feedback to refine your classification criteria for the next sentences.{{guidelines}})";

const char* kFeedbackAllCorrect =
    R"(Feedback on your last batch: all of your classifications were correct. Keep applying the same criteria to the next sentences.{{guidelines}})";

const char* kSummaryInstructions =
    R"(Feedback on the last round of unseen sentences: your accuracy was {{accuracy}} ({{correct}}/{{total}}). {{misclassified}} sentences were misclassified{{shown}}. Review these cases and adjust your criteria before the next round.{{guidelines}})";

}  // namespace

TemplateSet TemplateSet::defaults() {
  TemplateSet t;
  t.set("pretraining_instructions", kPretrainingInstructions);
  t.set("pretraining_thinking", kPretrainingThinking);
  t.set("batch_instructions", kBatchInstructions);
  t.set("reask_instructions", kReaskInstructions);
  t.set("batch_thinking", kBatchThinking);
  t.set("feedback_instructions", kFeedbackInstructions);
  t.set("feedback_all_correct", kFeedbackAllCorrect);
  t.set("summary_instructions", kSummaryInstructions);
  return t;
}

TemplateSet TemplateSet::load(const fs::path& dir) {
  TemplateSet t = defaults();
  if (!fs::is_directory(dir)) return t;
  for (const auto& name : t.names()) {
    const fs::path p = dir / (name + ".txt");
    if (!fs::exists(p)) continue;
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    t.set(name, std::move(text));
  }
  return t;
}

const Template& TemplateSet::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) fail(ErrorCode::kConfiguration, "unknown template '" + name + "'");
  return it->second;
}

void TemplateSet::set(const std::string& name, std::string text) {
  templates_.insert_or_assign(name, Template(std::move(text)));
}

std::vector<std::string> TemplateSet::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : templates_) out.push_back(k);
  return out;
}

}  // namespace annot
