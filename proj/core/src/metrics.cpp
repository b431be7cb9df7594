#include "midline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace midline {

namespace {

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                      static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

std::pair<double, double> curve_errors(const MidlineAnnotation& gt,
                                       std::span<const double> pred) {
  if (gt.is_empty()) throw Error("curve_errors: empty ground-truth interval");
  if (pred.size() < static_cast<size_t>(gt.interval.y_hi) + 1)
    throw Error("curve_errors: prediction does not cover the interval");
  double sq = 0.0, mx = 0.0;
  for (int y = gt.interval.y_lo; y <= gt.interval.y_hi; ++y) {
    const double e = std::abs(gt.x_at(y) - pred[static_cast<size_t>(y)]);
    sq += e * e;
    mx = std::max(mx, e);
  }
  return {std::sqrt(sq / gt.interval.length()), mx};
}

CurveMetricsReport aggregate_curve_metrics(const std::vector<StudyCurves>& studies) {
  std::vector<double> slice_rmse, slice_max, study_rmse, study_max;
  for (const auto& study : studies) {
    double pooled_sq = 0.0;
    long pooled_rows = 0;
    double mx = 0.0;
    bool any = false;
    for (const auto& [gt, pred] : study) {
      if (gt.is_empty()) continue;
      auto [rmse, emax] = curve_errors(gt, pred);
      slice_rmse.push_back(rmse);
      slice_max.push_back(emax);
      pooled_sq += rmse * rmse * gt.interval.length();
      pooled_rows += gt.interval.length();
      mx = std::max(mx, emax);
      any = true;
    }
    if (!any) continue;
    study_rmse.push_back(std::sqrt(pooled_sq / static_cast<double>(pooled_rows)));
    study_max.push_back(mx);
  }
  if (slice_rmse.empty()) throw Error("aggregate_curve_metrics: no annotated slices");
  CurveMetricsReport report;
  report.max = mean_std(study_max);
  report.rmse = mean_std(study_rmse);
  report.maxs = mean_std(slice_max);
  report.rmses = mean_std(slice_rmse);
  report.n_studies = static_cast<int>(study_rmse.size());
  report.n_slices = static_cast<int>(slice_rmse.size());
  return report;
}

MeanStd mls_mae(std::span<const std::pair<double, double>> gt_pred_mm) {
  if (gt_pred_mm.empty()) throw Error("mls_mae: empty input");
  std::vector<double> errors;
  errors.reserve(gt_pred_mm.size());
  for (const auto& [gt, pred] : gt_pred_mm) errors.push_back(std::abs(gt - pred));
  return mean_std(errors);
}

double roc_auc(const std::vector<bool>& labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error("roc_auc: size mismatch");
  const size_t n = labels.size();
  size_t n_pos = 0;
  for (bool l : labels) n_pos += l ? 1 : 0;
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error("roc_auc: both classes must be present");

  // Rank-sum with average ranks on ties; equals pair counting with
  // ties worth one half exactly (rank sums stay on the 0.5 lattice).
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]]) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double u = pos_rank_sum -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::string evaluation_report_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["mae_mm"] = {{"mean", report.mae_mm.mean}, {"std", report.mae_mm.std}};
  if (report.roc_auc_defined)
    j["roc_auc"] = report.roc_auc;
  else
    j["roc_auc"] = nullptr;
  auto ms = [](const MeanStd& m) {
    return nlohmann::json{{"mean", m.mean}, {"std", m.std}};
  };
  j["curve"] = {{"MAX", ms(report.curve.max)},
                {"RMSE", ms(report.curve.rmse)},
                {"MAXs", ms(report.curve.maxs)},
                {"RMSEs", ms(report.curve.rmses)}};
  j["n_studies"] = report.n_studies;
  j["n_slices"] = report.n_slices;
  return j.dump(2);
}

}  // namespace midline
