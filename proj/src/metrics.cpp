#include "annot/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "annot/error.hpp"

namespace annot {

using nlohmann::json;

json ConfusionMatrix::to_json() const { return {{"tp", tp}, {"fp", fp}, {"fn", fn}, {"tn", tn}}; }

ConfusionMatrix ConfusionMatrix::from_json(const json& j) {
  return {j.at("tp").get<std::int64_t>(), j.at("fp").get<std::int64_t>(),
          j.at("fn").get<std::int64_t>(), j.at("tn").get<std::int64_t>()};
}

json MetricsReport::to_json() const {
  return {{"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1},
          {"mcc", mcc},           {"counts", counts.to_json()}, {"n", n}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.mcc = j.at("mcc").get<double>();
  r.counts = ConfusionMatrix::from_json(j.at("counts"));
  r.n = j.at("n").get<std::int64_t>();
  return r;
}

ConfusionMatrix confusion(const std::map<std::string, Label>& predictions,
                          const std::map<std::string, Label>& gold) {
  for (const auto& [id, _] : predictions) {
    if (!gold.count(id)) fail(ErrorCode::kInvalidArgument, "prediction for unknown id '" + id + "'");
  }
  ConfusionMatrix cm;
  for (const auto& [id, truth] : gold) {
    auto it = predictions.find(id);
    const bool positive = truth == Label::kPositive;
    if (it == predictions.end()) {
      (positive ? cm.fn : cm.fp) += 1;
      continue;
    }
    const bool predicted_positive = it->second == Label::kPositive;
    if (positive && predicted_positive) ++cm.tp;
    else if (positive) ++cm.fn;
    else if (predicted_positive) ++cm.fp;
    else ++cm.tn;
  }
  return cm;
}

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

MetricsReport score(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.fn < 0 || cm.tn < 0) {
    fail(ErrorCode::kInvalidArgument, "negative confusion count");
  }
  if (cm.total() == 0) fail(ErrorCode::kInvalidArgument, "empty confusion matrix");
  const double tp = static_cast<double>(cm.tp);
  const double fp = static_cast<double>(cm.fp);
  const double fn = static_cast<double>(cm.fn);
  const double tn = static_cast<double>(cm.tn);

  MetricsReport r;
  r.counts = cm;
  r.n = cm.total();
  r.accuracy = (tp + tn) / static_cast<double>(r.n);
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  r.mcc = den == 0.0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(den);
  return r;
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

namespace {

bool matches(double computed, double published, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::llround(computed * scale) == std::llround(published * scale);
}

}  // namespace

std::vector<ConfusionMatrix> solve_from_stats(std::int64_t n, std::int64_t correct, double precision,
                                              double recall, int decimals,
                                              const StatsRefinement& refine) {
  std::vector<ConfusionMatrix> out;
  if (n <= 0 || correct < 0 || correct > n) return out;
  const std::int64_t wrong = n - correct;
  for (std::int64_t tp = 0; tp <= correct; ++tp) {
    for (std::int64_t fp = 0; fp <= wrong; ++fp) {
      const ConfusionMatrix cm{tp, fp, wrong - fp, correct - tp};
      const auto r = score(cm);
      if (!matches(r.precision, precision, decimals) || !matches(r.recall, recall, decimals)) continue;
      if (refine.f1 && !matches(r.f1, *refine.f1, refine.decimals)) continue;
      if (refine.mcc && !matches(r.mcc, *refine.mcc, refine.decimals)) continue;
      out.push_back(cm);
    }
  }
  return out;
}

std::string format_report(const MetricsReport& r, bool published_style) {
  char buf[128];
  std::ostringstream out;
  auto row = [&](const char* name, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-34s %s\n", name, value.c_str());
    out << buf;
  };
  auto pct = [&](double v, int d) {
    std::snprintf(buf, sizeof buf, "%.*f %%", d, v * 100.0);
    return std::string(buf);
  };
  const auto correct = r.counts.tp + r.counts.tn;
  const std::string frac = " (" + std::to_string(correct) + "/" + std::to_string(r.n) + ")";
  if (published_style) {
    row("Accuracy", pct(r.accuracy, 0) + frac);
    row("Precision", pct(r.precision, 1));
    row("Recall", pct(r.recall, 1));
    row("F1 score", pct(r.f1, 1));
    std::snprintf(buf, sizeof buf, "%.2f", r.mcc);
    row("Matthews correlation coefficient", buf);
  } else {
    row("Accuracy", pct(r.accuracy, 2) + frac);
    row("Precision", pct(r.precision, 2));
    row("Recall", pct(r.recall, 2));
    row("F1 score", pct(r.f1, 2));
    std::snprintf(buf, sizeof buf, "%.4f", r.mcc);
    row("Matthews correlation coefficient", buf);
  }
  std::snprintf(buf, sizeof buf, "TP=%lld FP=%lld FN=%lld TN=%lld\n",
                static_cast<long long>(r.counts.tp), static_cast<long long>(r.counts.fp),
                static_cast<long long>(r.counts.fn), static_cast<long long>(r.counts.tn));
  out << buf;
  return out.str();
}

}  // namespace annot
