#pragma once

#include <optional>
#include <span>

#include "midline/types.hpp"

namespace midline {

/// Line x = a + b*y (near-vertical chord, parameterized by row).
struct Line {
  double a = 0.0;
  double b = 0.0;
  double x_at(double y) const { return a + b * y; }
};

struct SliceMls {
  double value_mm = 0.0;
  int argmax_row = 0;  // smallest row attaining the max
  Line chord;
};

struct StudyMls {
  double value_mm = 0.0;
  int slice_index = 0;  // smallest index attaining the max
};

/// Straight line through the curve endpoints (the hypothetical normal
/// midline). xs[i] is the x at row interval.y_lo + i.
/// Requires y_hi - y_lo >= 2.
Line normal_midline(std::span<const double> xs, Interval interval);

/// Maximal per-row horizontal deviation |curve[y] - chord(y)| in mm.
/// Returns nullopt when the interval is empty or shorter than 3 rows
/// (MLS undefined on the slice).
std::optional<SliceMls> slice_mls(std::span<const double> xs, Interval interval, double px_mm);

/// Max over slices with a defined MLS; smallest slice index on ties.
std::optional<StudyMls> study_mls(std::span<const std::optional<SliceMls>> per_slice);

bool classify_significant(double value_mm, double threshold_mm = 5.0);

}  // namespace midline
