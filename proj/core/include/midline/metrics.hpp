#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "midline/data_model.hpp"
#include "midline/types.hpp"

namespace midline {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population std, matching "± std" reporting
};

struct CurveMetricsReport {
  MeanStd max;    // per-study maximal error
  MeanStd rmse;   // per-study RMSE pooled over annotated rows
  MeanStd maxs;   // per-slice maximal error
  MeanStd rmses;  // per-slice RMSE
  int n_studies = 0;
  int n_slices = 0;  // annotated slices
};

/// (rmse, max) of |gt - pred| over the ground-truth interval.
/// pred is indexed by absolute row and must cover the interval.
std::pair<double, double> curve_errors(const MidlineAnnotation& gt,
                                       std::span<const double> pred);

struct SliceCurvePair {
  MidlineAnnotation gt;
  std::vector<double> pred;  // one x per row (absolute indexing)
};
using StudyCurves = std::vector<SliceCurvePair>;

/// Table-2 style aggregation: MAXs/RMSEs over all annotated slices,
/// MAX/RMSE per study (max of slice maxima / RMSE pooled over that
/// study's annotated rows), each reported as mean +/- population std.
CurveMetricsReport aggregate_curve_metrics(const std::vector<StudyCurves>& studies);

/// Mean +/- std of |gt - pred| over study pairs (mm).
MeanStd mls_mae(std::span<const std::pair<double, double>> gt_pred_mm);

/// Mann-Whitney statistic: (concordant + 0.5 * tied) / (positives * negatives).
/// Requires both classes present.
double roc_auc(const std::vector<bool>& labels, std::span<const double> scores);

struct EvaluationReport {
  MeanStd mae_mm;
  double roc_auc = 0.0;
  bool roc_auc_defined = false;  // false when only one class is present
  CurveMetricsReport curve;
  int n_studies = 0;
  int n_slices = 0;
};

std::string evaluation_report_json(const EvaluationReport& report);

}  // namespace midline
