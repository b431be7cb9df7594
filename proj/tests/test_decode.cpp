#include <doctest.h>

#include <random>
#include <vector>

#include "midline/decode.hpp"
#include "oracles.hpp"

using namespace midline;

namespace {

ImageF one_hot_row(int cols, int hot) {
  ImageF img(1, cols, 0.0f);
  img(0, hot) = 1.0f;
  return img;
}

ImageF random_row_dist(int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ImageF img(1, cols);
  double sum = 0.0;
  for (int x = 0; x < cols; ++x) {
    img(0, x) = static_cast<float>(unif(rng));
    sum += img(0, x);
  }
  for (int x = 0; x < cols; ++x) img(0, x) = static_cast<float>(img(0, x) / sum);
  return img;
}

}  // namespace

TEST_CASE("expected_midline basics") {
  CHECK(expected_midline(one_hot_row(20, 10))[0] == doctest::Approx(10.0));

  ImageF uniform(1, 5, 0.2f);
  CHECK(expected_midline(uniform)[0] == doctest::Approx(2.0));

  ImageF two(1, 8, 0.0f);
  two(0, 4) = 0.5f;
  two(0, 6) = 0.5f;
  CHECK(expected_midline(two)[0] == doctest::Approx(5.0));

  ImageF bad(1, 4, 0.3f);  // sums to 1.2
  CHECK_THROWS_AS(expected_midline(bad), Error);
}

TEST_CASE("expected_midline flip anti-symmetry") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int cols = 7 + trial % 90;
    const ImageF prob = random_row_dist(cols, rng);
    ImageF flipped(1, cols);
    for (int x = 0; x < cols; ++x) flipped(0, x) = prob(0, cols - 1 - x);
    const double e = expected_midline(prob)[0];
    const double ef = expected_midline(flipped)[0];
    CHECK(std::abs(ef - ((cols - 1) - e)) <= 1e-6);
  }
}

TEST_CASE("confidence_band quantiles") {
  SUBCASE("one-hot collapses the band") {
    const auto band = confidence_band(one_hot_row(16, 7), 0.95);
    CHECK(band.lower[0] == doctest::Approx(7.0));
    CHECK(band.upper[0] == doctest::Approx(7.0));
  }
  SUBCASE("uniform over 100 columns at 95%") {
    ImageF uniform(1, 100, 0.01f);
    const auto band = confidence_band(uniform, 0.95);
    CHECK(band.lower[0] == doctest::Approx(2.0));
    CHECK(band.upper[0] == doctest::Approx(97.0));
    // cross-check against the brute-force cumulative scan
    std::vector<double> row(100, 0.01);
    CHECK(oracles::quantile_cumsum(row, 0.025) == 2);
    CHECK(oracles::quantile_cumsum(row, 0.975) == 97);
  }
  SUBCASE("widening coverage never narrows the band") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
      const ImageF prob = random_row_dist(40, rng);
      double prev_lo = 1e9, prev_hi = -1e9;
      for (double cov : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99}) {
        const auto band = confidence_band(prob, cov);
        if (prev_hi >= 0) {
          CHECK(band.lower[0] <= prev_lo);
          CHECK(band.upper[0] >= prev_hi);
        }
        prev_lo = band.lower[0];
        prev_hi = band.upper[0];
        // agreement with the cumulative-sum oracle
        std::vector<double> row(40);
        for (int x = 0; x < 40; ++x) row[static_cast<size_t>(x)] = prob(0, x);
        CHECK(band.lower[0] == oracles::quantile_cumsum(row, (1 - cov) / 2));
        CHECK(band.upper[0] == oracles::quantile_cumsum(row, (1 + cov) / 2));
      }
    }
  }
  SUBCASE("coverage near 1 spans the support") {
    ImageF prob(1, 10, 0.0f);
    prob(0, 3) = 0.5f;
    prob(0, 6) = 0.5f;
    const auto band = confidence_band(prob, 0.999999);
    CHECK(band.lower[0] == doctest::Approx(3.0));
    CHECK(band.upper[0] == doctest::Approx(6.0));
  }
  CHECK_THROWS_AS(confidence_band(one_hot_row(4, 0), 0.0), Error);
  CHECK_THROWS_AS(confidence_band(one_hot_row(4, 0), 1.0), Error);
}

TEST_CASE("limits_interval thresholding and hull") {
  const std::vector<double> probs{0.0, 0.0, 0.9, 0.2, 0.8, 0.9, 0.0};
  CHECK(limits_interval(probs, 0.5) == Interval::of(2, 5));  // gap at row 3 is hulled

  CHECK(limits_interval(std::vector<double>{0.1, 0.2, 0.3}, 0.5).is_empty());
  CHECK(limits_interval(std::vector<double>(6, 1.0), 0.5) == Interval::of(0, 5));

  // ties at exactly the threshold count as background
  CHECK(limits_interval(std::vector<double>{0.5, 0.5}, 0.5).is_empty());

  CHECK_THROWS_AS(limits_interval(probs, 1.0), Error);
  CHECK_THROWS_AS(limits_interval(probs, -0.1), Error);
}

TEST_CASE("limits_interval is contiguous and idempotent") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> probs(32);
    for (auto& p : probs) p = unif(rng);
    const Interval iv = limits_interval(probs, 0.5);
    if (iv.is_empty()) continue;
    // re-applying to the interval's own indicator reproduces it
    std::vector<double> indicator(probs.size(), 0.0);
    for (int y = iv.y_lo; y <= iv.y_hi; ++y) indicator[static_cast<size_t>(y)] = 1.0;
    CHECK(limits_interval(indicator, 0.5) == iv);
  }
}

TEST_CASE("mls_usable_interval minimum length rule") {
  CHECK(mls_usable_interval(Interval::of(4, 6)) == Interval::of(4, 6));
  CHECK(mls_usable_interval(Interval::of(4, 5)).is_empty());
  CHECK(mls_usable_interval(Interval::of(4, 4)).is_empty());
  CHECK(mls_usable_interval(Interval::empty()).is_empty());
}
