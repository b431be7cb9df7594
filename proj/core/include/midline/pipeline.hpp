#pragma once

#include <vector>

#include "midline/data_model.hpp"
#include "midline/network.hpp"
#include "midline/training.hpp"
#include "midline/types.hpp"

namespace midline {

struct PredictOptions {
  double coverage = 0.95;
  double limits_threshold = 0.5;
  double significance_threshold_mm = 5.0;
  int threads = 0;
};

/// Reflect-pad at the bottom/right edges (coordinates are preserved).
ImageF pad_reflect(const ImageF& image, int target_rows, int target_cols);

/// Full inference: preprocess each slice to the 0.5 mm frame, pad to the
/// model input, run the network, decode curves/bands/limits and derive the
/// per-slice and study MLS. Curves are reported in the resampled frame.
StudyPrediction predict_study(const Model& model, const Study& study,
                              const PredictOptions& options = {});

/// Preprocess a study into model-sized training samples (one per slice),
/// with annotations mapped into the resampled frame.
std::vector<TrainSample> make_training_samples(const Study& study,
                                               const StudyAnnotation& annotation,
                                               const ModelConfig& model_config);

}  // namespace midline
