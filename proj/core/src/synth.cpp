#include "midline/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace midline {

namespace {

struct RowSpan {
  int lx = 0, rx = -1;  // inclusive pixel span of the brain on this row
  int width() const { return rx < lx ? 0 : rx - lx + 1; }
};

std::vector<RowSpan> brain_row_spans(const PhantomParams& p) {
  std::vector<RowSpan> spans(static_cast<size_t>(p.rows));
  for (int y = 0; y < p.rows; ++y) {
    const double dy = (y - p.ellipse_cy) / p.semi_y;
    if (std::abs(dy) >= 1.0) continue;
    const double half = p.semi_x * std::sqrt(1.0 - dy * dy);
    const int lx = std::max(0, static_cast<int>(std::ceil(p.ellipse_cx - half)));
    const int rx = std::min(p.cols - 1, static_cast<int>(std::floor(p.ellipse_cx + half)));
    if (rx >= lx) spans[static_cast<size_t>(y)] = {lx, rx};
  }
  return spans;
}

Interval annotation_rows(const std::vector<RowSpan>& spans) {
  int lo = -1, hi = -1;
  for (size_t y = 0; y < spans.size(); ++y) {
    if (spans[y].width() >= 8) {
      if (lo < 0) lo = static_cast<int>(y);
      hi = static_cast<int>(y);
    }
  }
  return lo < 0 ? Interval::empty() : Interval::of(lo, hi);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double PhantomParams::curve_x(double y) const {
  const double d = (y - bump_center_y) / bump_sigma;
  return midline_x0 + bump_amp_px * std::exp(-0.5 * d * d);
}

void PhantomParams::validate() const {
  if (rows < 16 || cols < 16) throw Error("PhantomParams: image too small");
  if (!(bump_sigma > 0.0)) throw Error("PhantomParams: bump_sigma must be positive");
  if (bump_amp_px < 0.0) throw Error("PhantomParams: negative bump amplitude");
  if (!(semi_x > 0.0 && semi_y > 0.0)) throw Error("PhantomParams: bad ellipse axes");
  const auto spans = brain_row_spans(*this);
  const auto interval = annotation_rows(spans);
  for (int y = interval.y_lo; y <= interval.y_hi; ++y) {
    const auto& s = spans[static_cast<size_t>(y)];
    const double x = curve_x(y);
    if (x - s.lx < 3.0 || s.rx - x < 3.0)
      throw Error("PhantomParams: midline closer than 3 px to the brain border at row " +
                  std::to_string(y));
  }
}

std::pair<ImageF, MidlineAnnotation> gen_slice(const PhantomParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Low-frequency texture: two random harmonics.
  constexpr double tau = 2.0 * std::numbers::pi;
  const double fx1 = tau * (0.5 + 1.5 * unif(rng)) / p.cols;
  const double fy1 = tau * (0.5 + 1.5 * unif(rng)) / p.rows;
  const double fx2 = tau * (0.5 + 2.5 * unif(rng)) / p.cols;
  const double fy2 = tau * (0.5 + 2.5 * unif(rng)) / p.rows;
  const double ph1 = tau * unif(rng), ph2 = tau * unif(rng);

  const auto spans = brain_row_spans(p);
  const double polarity = p.bright_midline ? 1.0 : -1.0;

  ImageF img(p.rows, p.cols);
  for (int y = 0; y < p.rows; ++y) {
    const auto& span = spans[static_cast<size_t>(y)];
    const double xc = p.curve_x(y);
    for (int x = 0; x < p.cols; ++x) {
      double v = 0.0;
      if (x >= span.lx && x <= span.rx) {
        const double texture = 0.5 * (std::sin(fx1 * x + ph1) * std::sin(fy1 * y + ph2) +
                                      std::sin(fx2 * x + fy2 * y + ph1));
        v = 1.0 + p.texture_contrast * texture;
        // Anti-aliased midline: unit plateau of width 1, linear falloff to 1.5 px.
        const double t = std::clamp(1.5 - std::abs(x - xc), 0.0, 1.0);
        v += polarity * p.line_contrast * t;
      }
      v += p.noise_sigma * gauss(rng);
      img(y, x) = static_cast<float>(v);
    }
  }

  MidlineAnnotation ann;
  ann.interval = annotation_rows(spans);
  if (!ann.interval.is_empty()) {
    ann.xs.reserve(static_cast<size_t>(ann.interval.length()));
    for (int y = ann.interval.y_lo; y <= ann.interval.y_hi; ++y) ann.xs.push_back(p.curve_x(y));
  }
  return {std::move(img), std::move(ann)};
}

std::vector<SynthStudy> gen_dataset(int n_studies, int slices_per_study,
                                    const ShiftDistribution& dist, uint64_t seed) {
  if (n_studies < 1 || slices_per_study < 1) throw Error("gen_dataset: need n >= 1");
  if (!(dist.positive_frac >= 0.0 && dist.positive_frac <= 1.0))
    throw Error("gen_dataset: positive_frac outside [0, 1]");

  std::vector<SynthStudy> out;
  out.reserve(static_cast<size_t>(n_studies));
  for (int si = 0; si < n_studies; ++si) {
    const uint64_t study_seed =
        splitmix64(splitmix64(seed) ^ (0x9E3779B97F4A7C15ULL * (static_cast<uint64_t>(si) + 1)));
    std::mt19937_64 rng(study_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const bool positive = unif(rng) < dist.positive_frac;
    // Peak amplitudes keep a margin around the 5 mm (10 px) boundary so the
    // label is controlled by the draw, not by chord corrections.
    double peak_amp;
    if (positive) {
      peak_amp = 11.0 + 9.0 * unif(rng);
    } else {
      peak_amp = unif(rng) < 0.6 ? 1.5 * unif(rng) : 3.0 + 5.0 * unif(rng);
    }
    const bool bright = unif(rng) < 0.5;
    const double texture = 0.10 + 0.10 * unif(rng);
    const double noise = 0.03 + 0.05 * unif(rng);
    const double line_contrast = 0.35 + 0.20 * unif(rng);
    const int peak_slice = static_cast<int>(unif(rng) * slices_per_study) % slices_per_study;
    int empty_slice = -1;
    if (slices_per_study >= 2 && unif(rng) < dist.empty_slice_prob) {
      empty_slice = static_cast<int>(unif(rng) * slices_per_study) % slices_per_study;
      if (empty_slice == peak_slice) empty_slice = (empty_slice + 1) % slices_per_study;
    }

    SynthStudy item;
    char id[32];
    std::snprintf(id, sizeof(id), "study_%04d", si);
    item.study.id = id;
    item.study.spacing_mm = {5.0, 0.5, 0.5};
    const int rows = PhantomParams{}.rows;
    const int cols = PhantomParams{}.cols;

    for (int k = 0; k < slices_per_study; ++k) {
      const uint64_t slice_seed = splitmix64(study_seed ^ (static_cast<uint64_t>(k) + 1));
      if (k == empty_slice) {
        // No brain on this slice: noise-only background, midline undefined.
        std::mt19937_64 srng(slice_seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        ImageF img(rows, cols);
        for (auto& v : img.data) v = static_cast<float>(noise * gauss(srng));
        item.study.slices.push_back(std::move(img));
        item.annotation.slices.emplace_back();
        continue;
      }
      // Rows where the brain is exactly 8 px wide leave under a pixel of
      // lateral slack, so a draw can land within 3 px of the mask border;
      // redraw the geometry until the invariant holds (deterministic, the
      // study rng is consumed sequentially).
      std::pair<ImageF, MidlineAnnotation> slice;
      for (int attempt = 0;; ++attempt) {
        PhantomParams p;
        p.seed = slice_seed;
        p.ellipse_cx = 80.0 + (unif(rng) * 16.0 - 8.0);
        p.ellipse_cy = 80.0 + (unif(rng) * 12.0 - 6.0);
        p.semi_x = 50.0 + 14.0 * unif(rng);
        p.semi_y = 58.0 + 14.0 * unif(rng);
        p.midline_x0 = p.ellipse_cx + (unif(rng) * 1.0 - 0.5);
        p.bump_amp_px = (k == peak_slice) ? peak_amp : peak_amp * (0.2 + 0.5 * unif(rng));
        const double interval_len = 2.0 * p.semi_y;
        p.bump_center_y = p.ellipse_cy + (unif(rng) * 0.10 - 0.05) * interval_len;
        p.bump_sigma = (0.08 + 0.04 * unif(rng)) * interval_len;
        p.texture_contrast = texture;
        p.noise_sigma = noise;
        p.line_contrast = line_contrast;
        p.bright_midline = bright;
        try {
          slice = gen_slice(p);
          break;
        } catch (const Error&) {
          if (attempt >= 50) throw;
        }
      }
      item.study.slices.push_back(std::move(slice.first));
      item.annotation.slices.push_back(std::move(slice.second));
    }
    item.annotation.gt_mls_mm = annotation_mls_mm(item.annotation, item.study.spacing_mm[2]);
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace midline
