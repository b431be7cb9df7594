#pragma once

// Independent brute-force oracles used to pin expected values. These stay
// deliberately naive and separate from the library implementations.

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "midline/types.hpp"

namespace oracles {

// Plain double-loop bilinear resampling to `target` spacing; a point (x, y)
// in the input maps to (x*sx/target, y*sy/target).
inline midline::ImageF bilinear_resample(const midline::ImageF& in, double sy, double sx,
                                         double target = 0.5) {
  const int oh = std::max(1, static_cast<int>(std::lround(in.rows * sy / target)));
  const int ow = std::max(1, static_cast<int>(std::lround(in.cols * sx / target)));
  midline::ImageF out(oh, ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double y = i * target / sy;
      double x = j * target / sx;
      y = std::min(std::max(y, 0.0), static_cast<double>(in.rows - 1));
      x = std::min(std::max(x, 0.0), static_cast<double>(in.cols - 1));
      const int y0 = static_cast<int>(std::floor(y));
      const int x0 = static_cast<int>(std::floor(x));
      const int y1 = std::min(y0 + 1, in.rows - 1);
      const int x1 = std::min(x0 + 1, in.cols - 1);
      const double fy = y - y0, fx = x - x0;
      out(i, j) = static_cast<float>((1 - fy) * (1 - fx) * in(y0, x0) +
                                     (1 - fy) * fx * in(y0, x1) +
                                     fy * (1 - fx) * in(y1, x0) + fy * fx * in(y1, x1));
    }
  return out;
}

// Exhaustive 256-candidate Otsu search over the [min, max] histogram,
// recomputing the class statistics from scratch for every candidate.
struct OtsuOracleResult {
  double threshold = 0.0;
  std::vector<uint8_t> mask;
};

inline OtsuOracleResult otsu_exhaustive(const midline::ImageF& img) {
  OtsuOracleResult result;
  float lo = img.data[0], hi = img.data[0];
  for (float v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  result.mask.assign(img.size(), 1);
  if (lo == hi) {
    result.threshold = lo;
    return result;
  }
  const double width = (static_cast<double>(hi) - lo) / 256.0;
  std::array<long, 256> hist{};
  for (float v : img.data) {
    int bin = static_cast<int>((static_cast<double>(v) - lo) / width);
    hist[static_cast<size_t>(std::clamp(bin, 0, 255))]++;
  }
  double best_var = -1.0;
  int best = 0;
  for (int j = 0; j < 256; ++j) {
    double cnt0 = 0, sum0 = 0, cnt1 = 0, sum1 = 0;
    for (int b = 0; b <= j; ++b) {
      cnt0 += hist[static_cast<size_t>(b)];
      sum0 += static_cast<double>(b) * hist[static_cast<size_t>(b)];
    }
    for (int b = j + 1; b < 256; ++b) {
      cnt1 += hist[static_cast<size_t>(b)];
      sum1 += static_cast<double>(b) * hist[static_cast<size_t>(b)];
    }
    if (cnt0 == 0.0 || cnt1 == 0.0) continue;
    const double mu0 = sum0 / cnt0;
    const double mu1 = sum1 / cnt1;
    const double var = cnt0 * cnt1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best = j;
    }
  }
  result.threshold = lo + width * (best + 1);
  for (size_t i = 0; i < img.size(); ++i)
    result.mask[i] = img.data[i] > result.threshold ? 1 : 0;
  return result;
}

// All positive-negative pairs enumerated; ties count one half.
inline double auc_pairs(const std::vector<bool>& labels, const std::vector<double>& scores) {
  double num = 0.0;
  long n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    ++n_pos;
    for (size_t j = 0; j < labels.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  for (bool l : labels) n_neg += l ? 0 : 1;
  return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Direct evaluation of the slice-MLS definition: chord through the curve
// endpoints, then the max horizontal deviation over every row.
inline std::pair<double, int> slice_mls_direct(const std::vector<double>& xs, int y_lo,
                                               int y_hi, double px_mm) {
  const double b = (xs.back() - xs.front()) / (y_hi - y_lo);
  const double a = xs.front() - b * y_lo;
  double best = -1.0;
  int row = y_lo;
  for (int y = y_lo; y <= y_hi; ++y) {
    const double dev = std::abs(xs[static_cast<size_t>(y - y_lo)] - (a + b * y));
    if (dev > best) {
      best = dev;
      row = y;
    }
  }
  return {px_mm * best, row};
}

// Smallest x whose cumulative mass reaches q (with the decode slack).
inline int quantile_cumsum(const std::vector<double>& row, double q) {
  double cum = 0.0;
  for (size_t x = 0; x < row.size(); ++x) {
    cum += row[x];
    if (cum >= q - 1e-12) return static_cast<int>(x);
  }
  return static_cast<int>(row.size()) - 1;
}

}  // namespace oracles
