#pragma once

#include <utility>

#include "midline/data_model.hpp"
#include "midline/types.hpp"

namespace midline {

/// Diagonal affine map between pixel frames: x' = scale_x * x, y' = scale_y * y.
struct AffineMap2D {
  double scale_x = 1.0;
  double scale_y = 1.0;

  std::pair<double, double> apply(double x, double y) const { return {scale_x * x, scale_y * y}; }
  AffineMap2D inverse() const { return {1.0 / scale_x, 1.0 / scale_y}; }
};

struct PreprocessedSlice {
  ImageF image;       // resampled to 0.5 x 0.5 mm, normalized over foreground
  MaskU8 foreground;  // Otsu foreground on the resampled grid
  AffineMap2D transform;  // original pixel coords -> resampled pixel coords
};

inline constexpr double kIsoSpacingMm = 0.5;

/// Bilinear resampling to target_mm per axis (out-of-range samples clamp to
/// the edge). Output size H' x W' = round(H*sy/t) x round(W*sx/t); a point at
/// original (x, y) maps to (x*sx/t, y*sy/t).
std::pair<ImageF, AffineMap2D> resample_to_iso(const ImageF& slice, double sy, double sx,
                                               double target_mm = kIsoSpacingMm);

struct OtsuResult {
  double threshold = 0.0;
  MaskU8 mask;  // image > threshold
};

/// Threshold maximizing inter-class variance over a 256-bin histogram
/// spanning [min, max]; ties go to the lowest maximizing threshold.
/// A constant image yields a full-true mask with threshold = min.
OtsuResult otsu_foreground(const ImageF& image);

/// Zero mean, unit variance over the mask; pixels outside the mask are
/// zeroed. Throws on a degenerate mask (< 2 pixels or zero variance).
ImageF normalize_intensity(const ImageF& image, const MaskU8& mask);

/// Mirror along Ox: image'(x,y) = image(W-1-x, y), xs' = (W-1) - xs.
std::pair<ImageF, MidlineAnnotation> hflip(const ImageF& image, const MidlineAnnotation& ann);

/// Map a per-row annotation into the resampled frame: the interval is scaled
/// by sy/t and the curve linearly re-sampled at the new integer rows.
MidlineAnnotation resample_annotation(const MidlineAnnotation& ann, double sy, double sx,
                                      int out_rows, double target_mm = kIsoSpacingMm);

/// resample -> otsu -> normalize, the order used throughout the pipeline.
PreprocessedSlice preprocess_slice(const ImageF& slice, double sy, double sx);

}  // namespace midline
