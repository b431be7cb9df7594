#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "midline/data_model.hpp"
#include "midline/types.hpp"

namespace midline {

/// Phantom slices are generated directly at 0.5 mm/px, so the resampling
/// step is the identity on synthetic data.
struct PhantomParams {
  int rows = 160;
  int cols = 160;
  double ellipse_cx = 80.0;
  double ellipse_cy = 80.0;
  double semi_x = 58.0;
  double semi_y = 68.0;
  double midline_x0 = 80.0;   // base x of the midline
  double bump_amp_px = 0.0;   // Gaussian bump amplitude (>= 0)
  double bump_center_y = 80.0;
  double bump_sigma = 10.0;   // > 0
  double texture_contrast = 0.15;
  double noise_sigma = 0.05;
  double line_contrast = 0.45;
  bool bright_midline = true;  // intensity polarity of the line
  uint64_t seed = 0;

  double curve_x(double y) const;  // analytic midline
  void validate() const;           // bump must stay >= 3 px from the brain border
};

/// Textured ellipse with an anti-aliased sub-pixel midline. The annotation
/// interval covers rows where the brain mask is at least 8 px wide; xs is
/// the analytic curve. Deterministic given the seed.
std::pair<ImageF, MidlineAnnotation> gen_slice(const PhantomParams& params);

struct ShiftDistribution {
  double positive_frac = 0.5;  // fraction of studies with MLS >= 5 mm
  double empty_slice_prob = 0.3;  // chance a study contains a no-brain slice
};

struct SynthStudy {
  Study study;
  StudyAnnotation annotation;
};

std::vector<SynthStudy> gen_dataset(int n_studies, int slices_per_study,
                                    const ShiftDistribution& dist, uint64_t seed);

}  // namespace midline
