#include "midline/decode.hpp"

#include <cmath>

namespace midline {

std::vector<double> expected_midline(const ImageF& prob) {
  std::vector<double> curve(static_cast<size_t>(prob.rows));
  for (int y = 0; y < prob.rows; ++y) {
    const float* row = prob.row(y);
    double sum = 0.0, ex = 0.0;
    for (int x = 0; x < prob.cols; ++x) {
      sum += row[x];
      ex += static_cast<double>(x) * row[x];
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw Error("expected_midline: row " + std::to_string(y) + " sums to " +
                  std::to_string(sum) + ", not a distribution");
    curve[static_cast<size_t>(y)] = ex;
  }
  return curve;
}

namespace {

// Smallest x with cumulative mass >= q - 1e-12.
int row_quantile(const float* row, int cols, double q) {
  double cum = 0.0;
  for (int x = 0; x < cols; ++x) {
    cum += row[x];
    if (cum >= q - 1e-12) return x;
  }
  return cols - 1;  // numerical slack: total mass fell short of q
}

}  // namespace

ConfidenceBand confidence_band(const ImageF& prob, double coverage) {
  if (!(coverage > 0.0 && coverage < 1.0))
    throw Error("confidence_band: coverage must lie in (0, 1)");
  ConfidenceBand band;
  band.coverage = coverage;
  band.lower.resize(static_cast<size_t>(prob.rows));
  band.upper.resize(static_cast<size_t>(prob.rows));
  const double q_lo = (1.0 - coverage) / 2.0;
  const double q_hi = (1.0 + coverage) / 2.0;
  for (int y = 0; y < prob.rows; ++y) {
    band.lower[static_cast<size_t>(y)] = row_quantile(prob.row(y), prob.cols, q_lo);
    band.upper[static_cast<size_t>(y)] = row_quantile(prob.row(y), prob.cols, q_hi);
  }
  return band;
}

Interval limits_interval(std::span<const double> limits_prob, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0))
    throw Error("limits_interval: threshold must lie in [0, 1)");
  int lo = -1, hi = -1;
  for (size_t y = 0; y < limits_prob.size(); ++y) {
    if (limits_prob[y] > threshold) {
      if (lo < 0) lo = static_cast<int>(y);
      hi = static_cast<int>(y);
    }
  }
  if (lo < 0) return Interval::empty();
  return Interval::of(lo, hi);
}

Interval mls_usable_interval(Interval interval) {
  if (interval.is_empty() || interval.y_hi - interval.y_lo < 2) return Interval::empty();
  return interval;
}

}  // namespace midline
