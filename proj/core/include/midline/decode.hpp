#pragma once

#include <span>
#include <vector>

#include "midline/types.hpp"

namespace midline {

struct ConfidenceBand {
  std::vector<double> lower;  // one x per row
  std::vector<double> upper;
  double coverage = 0.95;
};

/// Soft-argmax decoding: curve[y] = sum_x x * prob(y, x).
/// Each row of prob must sum to 1 within 1e-4.
std::vector<double> expected_midline(const ImageF& prob);

/// Per-row discrete quantiles of the row distributions.
/// quantile(q) = smallest x whose cumulative mass reaches q - 1e-12;
/// lower/upper use (1 -/+ coverage)/2. coverage must lie in (0, 1).
ConfidenceBand confidence_band(const ImageF& prob, double coverage);

/// Rows with probability strictly above the threshold, closed under the 1D
/// convex hull (gaps filled). Ties at the threshold count as background.
Interval limits_interval(std::span<const double> limits_prob, double threshold = 0.5);

/// Minimum-length rule for downstream MLS: a chord needs two distinct
/// endpoints and a third row to deviate, so intervals shorter than 3 rows
/// are treated as empty.
Interval mls_usable_interval(Interval interval);

}  // namespace midline
