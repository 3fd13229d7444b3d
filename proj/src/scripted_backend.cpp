#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "annot/error.hpp"
#include "annot/model_gateway.hpp"
#include "annot/text.hpp"

namespace annot {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class ScriptedBackend : public ChatBackend {
 public:
  ScriptedBackend(OracleScript script, LabelScheme scheme)
      : script_(std::move(script)), scheme_(std::move(scheme)) {}

  std::string complete(const std::vector<Turn>& /*history*/, const PromptDoc& prompt) override {
    switch (prompt.kind) {
      case PromptKind::kPretraining:
        return pretraining_reply(prompt);
      case PromptKind::kBatch:
        return classify(prompt, script_.schedule_for(prompt.meta.phase, prompt.meta.round));
      case PromptKind::kReask:
        return classify(prompt, RoundSchedule{0.0, {}, {}, 0});
      case PromptKind::kFeedback:
      case PromptKind::kSummary:
        return "Thank you. I have noted the corrections and will apply the refined criteria to the next sentences.";
    }
    return {};
  }

 private:
  std::string pretraining_reply(const PromptDoc& prompt) const {
    const auto n = prompt.count(BlockTag::kExample);
    return "<thinking>I compared the " + std::to_string(n) + " examples. " + scheme_.positive_name +
           " sentences use the verb with an object and a predicative complement that expresses a judgement; " +
           scheme_.negative_name + " sentences use it in other senses.</thinking>\n" + script_.comments;
  }

  Label gold_of(const std::string& id) const {
    auto it = script_.gold.find(id);
    if (it == script_.gold.end()) fail(ErrorCode::kConfiguration, "oracle script has no gold label for '" + id + "'");
    return it->second;
  }

  std::string classify(const PromptDoc& prompt, const RoundSchedule& schedule) const {
    const auto ids = prompt.item_ids();
    std::string key = prompt.meta.phase + "#" + std::to_string(prompt.meta.round);
    for (const auto& id : ids) key += "#" + id;
    std::mt19937_64 rng(script_.seed ^ fnv1a(key));

    std::vector<std::string> order = ids;
    std::shuffle(order.begin(), order.end(), rng);

    std::set<std::string> wrong;
    std::set<std::string> abstain;
    auto take = [&](std::size_t k, auto pred, std::set<std::string>& dst, const char* what) {
      for (const auto& id : order) {
        if (k == 0) break;
        if (wrong.count(id) || abstain.count(id) || !pred(id)) continue;
        dst.insert(id);
        --k;
      }
      if (k != 0) {
        fail(ErrorCode::kConfiguration, std::string("oracle script asks for more ") + what +
                                            " than the round allows in phase " + prompt.meta.phase);
      }
    };
    if (schedule.false_positives || schedule.false_negatives) {
      take(schedule.false_positives.value_or(0),
           [&](const std::string& id) { return gold_of(id) == Label::kNegative; }, wrong, "false positives");
      take(schedule.false_negatives.value_or(0),
           [&](const std::string& id) { return gold_of(id) == Label::kPositive; }, wrong, "false negatives");
    } else {
      const auto k = static_cast<std::size_t>(std::llround(schedule.error_rate.value_or(0.0) *
                                                           static_cast<double>(ids.size())));
      take(k, [](const std::string&) { return true; }, wrong, "errors");
    }
    take(schedule.abstain, [](const std::string&) { return true; }, abstain, "abstentions");

    std::string out;
    for (const auto& id : ids) {
      if (abstain.count(id)) continue;
      const Label gold = gold_of(id);
      const Label answer = wrong.count(id) ? flip(gold) : gold;
      out += "<item id=\"" + xml_escape_attr(id) + "\">\n<thinking>";
      out += answer == Label::kPositive ? "Object with predicative judgement." : "No predicative judgement.";
      out += "</thinking>\n<answer>" + scheme_.name_of(answer) + "</answer>\n</item>\n";
    }
    return out;
  }

  OracleScript script_;
  LabelScheme scheme_;
};

}  // namespace

std::unique_ptr<ChatBackend> make_scripted_backend(OracleScript script, LabelScheme scheme) {
  return std::make_unique<ScriptedBackend>(std::move(script), std::move(scheme));
}

}  // namespace annot
