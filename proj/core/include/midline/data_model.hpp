#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "midline/types.hpp"

namespace midline {

/// Ordered stack of axial slices plus physical pixel spacing.
/// spacing_mm = (inter-slice, row, column), all strictly positive.
struct Study {
  std::string id;
  std::vector<ImageF> slices;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};

  int rows() const { return slices.empty() ? 0 : slices.front().rows; }
  int cols() const { return slices.empty() ? 0 : slices.front().cols; }
  void validate() const;
};

/// Per-row sub-pixel midline x-coordinates over a contiguous row interval.
/// An empty interval means the midline is undefined on the slice.
struct MidlineAnnotation {
  Interval interval;
  std::vector<double> xs;  // one x per row in the interval, 0 <= x < W

  bool is_empty() const { return interval.is_empty(); }
  /// x-coordinate at absolute row y (must lie inside the interval).
  double x_at(int y) const { return xs[static_cast<size_t>(y - interval.y_lo)]; }
  void validate(int rows, int cols) const;
};

struct StudyAnnotation {
  std::vector<MidlineAnnotation> slices;  // one per study slice
  /// Recomputed from the curves; present iff any slice has a midline.
  std::optional<double> gt_mls_mm;
};

struct SlicePrediction {
  std::vector<double> curve;  // decoded midline, one x per row
  std::vector<double> lower;  // confidence band
  std::vector<double> upper;
  double coverage = 0.95;
  Interval interval;  // predicted limits; empty when no usable midline
  std::optional<double> mls_mm;
  std::optional<int> mls_row;
};

struct StudyPrediction {
  std::string study_id;
  std::vector<SlicePrediction> slices;
  std::optional<double> mls_mm;      // max over slices with a midline
  std::optional<int> argmax_slice;   // slice attaining it
  bool significant = false;
  double significance_threshold_mm = 5.0;
  double px_mm = 0.5;  // pixel pitch of the frame the curves live in
  void validate() const;
};

// On-disk layout (see README): a study directory holds meta.json and
// volume.raw (32-bit LE floats, C order), annotations live in
// annotation.json, predictions in a standalone JSON document.

Study load_study(const std::filesystem::path& dir);
void save_study(const std::filesystem::path& dir, const Study& study);

StudyAnnotation load_annotations(const std::filesystem::path& file, const Study& study);
void save_annotations(const std::filesystem::path& file, const StudyAnnotation& ann);

void save_predictions(const std::filesystem::path& file, const StudyPrediction& pred);
StudyPrediction load_predictions(const std::filesystem::path& file);

/// Recompute gt_mls_mm from the stored curves (the mls module is the single
/// source of truth; values from disk are never trusted).
std::optional<double> annotation_mls_mm(const StudyAnnotation& ann, double px_mm);

}  // namespace midline
