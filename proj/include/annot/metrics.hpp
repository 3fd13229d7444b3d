#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annot/labels.hpp"

namespace annot {

/// Binary confusion counts; the positive class is the scheme's positive label.
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  /// Positive and negative class designations exchanged.
  ConfusionMatrix swapped() const { return {tn, fn, fp, tp}; }
  bool operator==(const ConfusionMatrix&) const = default;

  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  ConfusionMatrix counts;
  std::int64_t n = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Missing predictions (abstentions) count as errors on the gold class.
/// Throws when a prediction names an id absent from `gold`.
ConfusionMatrix confusion(const std::map<std::string, Label>& predictions,
                          const std::map<std::string, Label>& gold);

/// Zero denominators yield 0.0 for precision, recall, F1 and MCC.
MetricsReport score(const ConfusionMatrix& cm);

/// Optional extra published statistics used to narrow solve_from_stats.
struct StatsRefinement {
  std::optional<double> f1;
  std::optional<double> mcc;
  int decimals = 2;
};

/// Every integer matrix with tp+tn = correct, total = n, and precision and
/// recall equal to the given values at `decimals` places.
std::vector<ConfusionMatrix> solve_from_stats(std::int64_t n, std::int64_t correct, double precision,
                                              double recall, int decimals,
                                              const StatsRefinement& refine = {});

double round_to(double value, int decimals);

/// Text table in the row order Accuracy, Precision, Recall, F1 score,
/// Matthews correlation coefficient. `published_style` uses the coarse rounding
/// of published tables (accuracy as whole percent with the fraction).
std::string format_report(const MetricsReport& r, bool published_style = false);

}  // namespace annot
