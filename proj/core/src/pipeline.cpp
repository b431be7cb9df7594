#include "midline/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "midline/decode.hpp"
#include "midline/mls.hpp"
#include "midline/preprocess.hpp"

namespace midline {

namespace {

// Mirror without repeating the edge sample (period 2(n-1)).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

}  // namespace

ImageF pad_reflect(const ImageF& image, int target_rows, int target_cols) {
  if (target_rows < image.rows || target_cols < image.cols)
    throw Error("pad_reflect: target smaller than the image");
  if (target_rows == image.rows && target_cols == image.cols) return image;
  ImageF out(target_rows, target_cols);
  for (int y = 0; y < target_rows; ++y) {
    const int sy = reflect_index(y, image.rows);
    for (int x = 0; x < target_cols; ++x)
      out(y, x) = image(sy, reflect_index(x, image.cols));
  }
  return out;
}

StudyPrediction predict_study(const Model& model, const Study& study,
                              const PredictOptions& options) {
  study.validate();
  const auto& cfg = model.config();

  std::vector<ImageF> padded;
  padded.reserve(study.slices.size());
  int work_rows = 0, work_cols = 0;  // resampled size before padding
  for (const auto& slice : study.slices) {
    auto pre = preprocess_slice(slice, study.spacing_mm[1], study.spacing_mm[2]);
    work_rows = pre.image.rows;
    work_cols = pre.image.cols;
    if (work_rows > cfg.input_rows || work_cols > cfg.input_cols)
      throw Error("predict_study: resampled slice " + std::to_string(work_rows) + "x" +
                  std::to_string(work_cols) + " exceeds the model input " +
                  std::to_string(cfg.input_rows) + "x" + std::to_string(cfg.input_cols));
    padded.push_back(pad_reflect(pre.image, cfg.input_rows, cfg.input_cols));
  }

  StudyPrediction pred;
  pred.study_id = study.id;
  pred.significance_threshold_mm = options.significance_threshold_mm;
  pred.px_mm = kIsoSpacingMm;

  std::vector<std::optional<SliceMls>> per_slice;
  constexpr int kChunk = 16;
  for (size_t start = 0; start < padded.size(); start += kChunk) {
    const size_t stop = std::min(padded.size(), start + kChunk);
    const std::span<const ImageF> chunk(padded.data() + start, stop - start);
    const NetworkOutputs out = model.forward(chunk, options.threads);
    for (int b = 0; b < out.batch; ++b) {
      // Crop the logits back to the resampled frame, then renormalize so the
      // per-row distribution is over the original columns.
      const ImageF logits = out.logits_slice(b);
      ImageF cropped(work_rows, work_cols);
      for (int y = 0; y < work_rows; ++y)
        for (int x = 0; x < work_cols; ++x) cropped(y, x) = logits(y, x);
      const ImageF prob = row_softmax(cropped);

      SlicePrediction sp;
      sp.curve = expected_midline(prob);
      auto band = confidence_band(prob, options.coverage);
      sp.lower = std::move(band.lower);
      sp.upper = std::move(band.upper);
      sp.coverage = options.coverage;

      std::vector<double> limits(static_cast<size_t>(work_rows));
      for (int y = 0; y < work_rows; ++y)
        limits[static_cast<size_t>(y)] =
            out.limits_prob[static_cast<size_t>(b) * out.rows + y];
      sp.interval = mls_usable_interval(limits_interval(limits, options.limits_threshold));

      if (!sp.interval.is_empty()) {
        const std::span<const double> xs(sp.curve.data() + sp.interval.y_lo,
                                         static_cast<size_t>(sp.interval.length()));
        const auto result = slice_mls(xs, sp.interval, kIsoSpacingMm);
        sp.mls_mm = result->value_mm;
        sp.mls_row = result->argmax_row;
        per_slice.push_back(*result);
      } else {
        per_slice.emplace_back(std::nullopt);
      }
      pred.slices.push_back(std::move(sp));
    }
  }

  if (const auto overall = study_mls(per_slice)) {
    pred.mls_mm = overall->value_mm;
    pred.argmax_slice = overall->slice_index;
    pred.significant = classify_significant(overall->value_mm, options.significance_threshold_mm);
  }
  return pred;
}

std::vector<TrainSample> make_training_samples(const Study& study,
                                               const StudyAnnotation& annotation,
                                               const ModelConfig& model_config) {
  study.validate();
  if (annotation.slices.size() != study.slices.size())
    throw Error("make_training_samples: annotation/study slice count mismatch");

  std::vector<TrainSample> samples;
  samples.reserve(study.slices.size());
  for (size_t i = 0; i < study.slices.size(); ++i) {
    auto pre = preprocess_slice(study.slices[i], study.spacing_mm[1], study.spacing_mm[2]);
    auto ann = resample_annotation(annotation.slices[i], study.spacing_mm[1],
                                   study.spacing_mm[2], pre.image.rows);
    if (pre.image.rows > model_config.input_rows || pre.image.cols > model_config.input_cols)
      throw Error("make_training_samples: resampled slice exceeds the model input size");
    TrainSample s;
    s.image = pad_reflect(pre.image, model_config.input_rows, model_config.input_cols);
    s.annotation = std::move(ann);
    s.annotation.validate(model_config.input_rows, model_config.input_cols);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace midline
