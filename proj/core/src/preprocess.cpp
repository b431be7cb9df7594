#include "midline/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace midline {

std::pair<ImageF, AffineMap2D> resample_to_iso(const ImageF& slice, double sy, double sx,
                                               double target_mm) {
  if (!(sy > 0.0 && sx > 0.0)) throw Error("resample_to_iso: non-positive spacing");
  if (!(target_mm > 0.0)) throw Error("resample_to_iso: non-positive target spacing");

  const AffineMap2D transform{sx / target_mm, sy / target_mm};
  const int out_rows = std::max(1, static_cast<int>(std::lround(slice.rows * sy / target_mm)));
  const int out_cols = std::max(1, static_cast<int>(std::lround(slice.cols * sx / target_mm)));

  ImageF out(out_rows, out_cols);
  const auto inv = transform.inverse();
  for (int i = 0; i < out_rows; ++i) {
    const double y = std::clamp(i * inv.scale_y, 0.0, static_cast<double>(slice.rows - 1));
    const int y0 = static_cast<int>(y);
    const int y1 = std::min(y0 + 1, slice.rows - 1);
    const double fy = y - y0;
    for (int j = 0; j < out_cols; ++j) {
      const double x = std::clamp(j * inv.scale_x, 0.0, static_cast<double>(slice.cols - 1));
      const int x0 = static_cast<int>(x);
      const int x1 = std::min(x0 + 1, slice.cols - 1);
      const double fx = x - x0;
      const double v = (1 - fy) * ((1 - fx) * slice(y0, x0) + fx * slice(y0, x1)) +
                       fy * ((1 - fx) * slice(y1, x0) + fx * slice(y1, x1));
      out(i, j) = static_cast<float>(v);
    }
  }
  return {std::move(out), transform};
}

OtsuResult otsu_foreground(const ImageF& image) {
  if (image.size() == 0) throw Error("otsu_foreground: empty image");
  float lo = image.data[0], hi = image.data[0];
  for (float v : image.data) {
    if (!std::isfinite(v)) throw Error("otsu_foreground: non-finite intensity");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  OtsuResult result;
  result.mask = MaskU8(image.rows, image.cols, 1);
  if (lo == hi) {
    result.threshold = lo;  // degenerate: everything is foreground
    return result;
  }

  constexpr int kBins = 256;
  const double width = (static_cast<double>(hi) - lo) / kBins;
  std::array<long, kBins> hist{};
  for (float v : image.data) {
    int bin = static_cast<int>((static_cast<double>(v) - lo) / width);
    hist[static_cast<size_t>(std::clamp(bin, 0, kBins - 1))]++;
  }

  // All sums below are exact (integer-valued in double), so the argmax is
  // insensitive to accumulation order.
  const long total = static_cast<long>(image.size());
  double total_weighted = 0.0;
  for (int b = 0; b < kBins; ++b) total_weighted += static_cast<double>(b) * hist[b];

  double cnt0 = 0.0, sum0 = 0.0;
  double best_var = -1.0;
  int best_bin = 0;
  for (int j = 0; j < kBins; ++j) {
    cnt0 += hist[static_cast<size_t>(j)];
    sum0 += static_cast<double>(j) * hist[static_cast<size_t>(j)];
    const double cnt1 = static_cast<double>(total) - cnt0;
    if (cnt0 == 0.0 || cnt1 == 0.0) continue;
    const double mu0 = sum0 / cnt0;
    const double mu1 = (total_weighted - sum0) / cnt1;
    const double var = cnt0 * cnt1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best_bin = j;
    }
  }

  result.threshold = lo + width * (best_bin + 1);
  for (size_t i = 0; i < image.size(); ++i)
    result.mask.data[i] = image.data[i] > result.threshold ? 1 : 0;
  return result;
}

ImageF normalize_intensity(const ImageF& image, const MaskU8& mask) {
  if (!image.same_shape(ImageF{mask.rows, mask.cols}))
    throw Error("normalize_intensity: image/mask shape mismatch");
  long count = 0;
  double sum = 0.0;
  for (size_t i = 0; i < image.size(); ++i)
    if (mask.data[i]) {
      sum += image.data[i];
      ++count;
    }
  if (count < 2) throw Error("normalize_intensity: degenerate mask (< 2 pixels)");
  const double mean = sum / count;
  double var = 0.0;
  for (size_t i = 0; i < image.size(); ++i)
    if (mask.data[i]) var += (image.data[i] - mean) * (image.data[i] - mean);
  var /= count;
  if (!(var > 0.0)) throw Error("normalize_intensity: degenerate mask (zero variance)");
  const double inv_std = 1.0 / std::sqrt(var);

  ImageF out(image.rows, image.cols);
  for (size_t i = 0; i < image.size(); ++i)
    out.data[i] = mask.data[i] ? static_cast<float>((image.data[i] - mean) * inv_std) : 0.0f;
  return out;
}

std::pair<ImageF, MidlineAnnotation> hflip(const ImageF& image, const MidlineAnnotation& ann) {
  ImageF flipped(image.rows, image.cols);
  for (int y = 0; y < image.rows; ++y)
    for (int x = 0; x < image.cols; ++x) flipped(y, x) = image(y, image.cols - 1 - x);
  MidlineAnnotation flipped_ann = ann;
  for (double& x : flipped_ann.xs) x = (image.cols - 1) - x;
  return {std::move(flipped), std::move(flipped_ann)};
}

MidlineAnnotation resample_annotation(const MidlineAnnotation& ann, double sy, double sx,
                                      int out_rows, double target_mm) {
  if (!(sy > 0.0 && sx > 0.0)) throw Error("resample_annotation: non-positive spacing");
  if (ann.is_empty()) return {};

  const double scale_y = sy / target_mm;
  const double scale_x = sx / target_mm;
  int lo = static_cast<int>(std::ceil(ann.interval.y_lo * scale_y - 1e-9));
  int hi = static_cast<int>(std::floor(ann.interval.y_hi * scale_y + 1e-9));
  lo = std::max(lo, 0);
  hi = std::min(hi, out_rows - 1);
  if (hi < lo) return {};

  MidlineAnnotation out;
  out.interval = Interval::of(lo, hi);
  out.xs.reserve(static_cast<size_t>(hi - lo + 1));
  for (int y = lo; y <= hi; ++y) {
    if (ann.interval.length() == 1) {
      out.xs.push_back(scale_x * ann.xs.front());
      continue;
    }
    const double src = std::clamp(y / scale_y, static_cast<double>(ann.interval.y_lo),
                                  static_cast<double>(ann.interval.y_hi));
    const int s0 = std::min(static_cast<int>(src), ann.interval.y_hi - 1);
    const double f = src - s0;
    const double x = (1 - f) * ann.x_at(s0) + f * ann.x_at(s0 + 1);
    out.xs.push_back(scale_x * x);
  }
  return out;
}

PreprocessedSlice preprocess_slice(const ImageF& slice, double sy, double sx) {
  auto [resampled, transform] = resample_to_iso(slice, sy, sx);
  auto otsu = otsu_foreground(resampled);
  PreprocessedSlice out;
  out.image = normalize_intensity(resampled, otsu.mask);
  out.foreground = std::move(otsu.mask);
  out.transform = transform;
  return out;
}

}  // namespace midline
