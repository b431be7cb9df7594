#include "midline/mls.hpp"

#include <cmath>

namespace midline {

Line normal_midline(std::span<const double> xs, Interval interval) {
  if (interval.is_empty() || interval.y_hi - interval.y_lo < 2)
    throw Error("normal_midline: interval must span at least 3 rows");
  if (xs.size() != static_cast<size_t>(interval.length()))
    throw Error("normal_midline: xs length does not match interval");
  const double y0 = interval.y_lo;
  const double y1 = interval.y_hi;
  const double b = (xs.back() - xs.front()) / (y1 - y0);
  const double a = xs.front() - b * y0;
  return {a, b};
}

std::optional<SliceMls> slice_mls(std::span<const double> xs, Interval interval, double px_mm) {
  if (px_mm <= 0.0) throw Error("slice_mls: px_mm must be positive");
  if (interval.is_empty() || interval.y_hi - interval.y_lo < 2) return std::nullopt;
  if (xs.size() != static_cast<size_t>(interval.length()))
    throw Error("slice_mls: xs length does not match interval");

  const Line chord = normal_midline(xs, interval);
  double best = -1.0;
  int best_row = interval.y_lo;
  for (int y = interval.y_lo; y <= interval.y_hi; ++y) {
    const double dev = std::abs(xs[static_cast<size_t>(y - interval.y_lo)] - chord.x_at(y));
    if (dev > best) {
      best = dev;
      best_row = y;
    }
  }
  return SliceMls{px_mm * best, best_row, chord};
}

std::optional<StudyMls> study_mls(std::span<const std::optional<SliceMls>> per_slice) {
  std::optional<StudyMls> best;
  for (size_t i = 0; i < per_slice.size(); ++i) {
    if (!per_slice[i]) continue;
    if (!best || per_slice[i]->value_mm > best->value_mm)
      best = StudyMls{per_slice[i]->value_mm, static_cast<int>(i)};
  }
  return best;
}

bool classify_significant(double value_mm, double threshold_mm) {
  if (threshold_mm < 0.0) throw Error("classify_significant: negative threshold");
  if (value_mm < 0.0) throw Error("classify_significant: negative MLS");
  return value_mm >= threshold_mm;
}

}  // namespace midline
