#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "midline/network.hpp"

using namespace midline;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_rows = 32;
  cfg.input_cols = 32;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.shared_layers = 1;
  cfg.seed = 5;
  return cfg;
}

ImageF random_input(int rows, int cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  ImageF img(rows, cols);
  for (auto& v : img.data) v = gauss(rng);
  return img;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Parameter count derived from the layer list: stem, shared blocks, an
// encoder block per level with stride-2 transitions, merge+decoder blocks,
// the 1x1 head, and the limits head (2 blocks, pool, two 1D convs).
size_t expected_parameter_count(const ModelConfig& cfg) {
  auto conv = [](int cin, int cout, int k) { return static_cast<size_t>(cout) * cin * k + cout; };
  auto block = [&](int c) { return 2 * conv(c, c, 9); };
  const int c = cfg.base_channels;
  size_t total = conv(1, c, 9);
  total += static_cast<size_t>(cfg.shared_layers) * block(c);
  for (int l = 0; l < cfg.depth; ++l) total += block(c << l);
  for (int l = 0; l + 1 < cfg.depth; ++l) total += conv(c << l, c << (l + 1), 9);
  for (int l = 0; l + 1 < cfg.depth; ++l)
    total += conv((c << l) + (c << (l + 1)), c << l, 9) + block(c << l);
  total += conv(c, 1, 1);
  total += 2 * block(c);
  total += conv(c, c, 3) + conv(c, 1, 3);
  return total;
}

}  // namespace

TEST_CASE("build_model validation") {
  ModelConfig cfg;
  cfg.input_rows = 160;
  cfg.input_cols = 160;
  CHECK_NOTHROW(Model{cfg});
  cfg.input_rows = 150;  // not divisible by 2^3
  CHECK_THROWS_AS(Model{cfg}, Error);
  cfg.input_rows = 160;
  cfg.base_channels = 0;
  CHECK_THROWS_AS(Model{cfg}, Error);
}

TEST_CASE("build_model is deterministic given the seed") {
  const auto cfg = small_config();
  const Model a(cfg), b(cfg);
  const auto dir = fs::temp_directory_path() / "midline_net_det";
  fs::create_directories(dir);
  a.save(dir / "a.ckpt");
  b.save(dir / "b.ckpt");
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));

  ModelConfig other = cfg;
  other.seed = 6;
  Model c(other);
  c.save(dir / "c.ckpt");
  CHECK(file_bytes(dir / "a.ckpt") != file_bytes(dir / "c.ckpt"));
}

TEST_CASE("parameter count matches the analytic layer list") {
  const auto small = small_config();
  CHECK(Model(small).parameter_count() == expected_parameter_count(small));

  const ModelConfig desk{};  // depth 3, base 16, 2 shared blocks
  CHECK(Model(desk).parameter_count() == expected_parameter_count(desk));
  CHECK(Model(desk).parameter_count() == 197442);  // frozen once, asserted thereafter
}

TEST_CASE("forward satisfies the row-normalization constraint") {
  const auto cfg = small_config();
  const Model model(cfg);
  std::vector<ImageF> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_input(32, 32, 10 + i));
  const auto out = model.forward(batch);
  REQUIRE(out.batch == 3);
  for (int b = 0; b < 3; ++b)
    for (int y = 0; y < out.rows; ++y) {
      double sum = 0.0;
      for (int x = 0; x < out.cols; ++x)
        sum += out.midline_prob[(static_cast<size_t>(b) * out.rows + y) * out.cols + x];
      CHECK(std::abs(sum - 1.0) <= 1e-5);
    }
  for (float p : out.limits_prob) {
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }
}

TEST_CASE("forward is batch-order equivariant and content deterministic") {
  const auto cfg = small_config();
  const Model model(cfg);
  const ImageF a = random_input(32, 32, 20), b = random_input(32, 32, 21);

  SUBCASE("identical slices produce identical outputs") {
    const auto out = model.forward(std::vector<ImageF>{a, a});
    for (size_t i = 0; i < static_cast<size_t>(out.rows) * out.cols; ++i)
      CHECK(out.midline_logits[i] ==
            out.midline_logits[static_cast<size_t>(out.rows) * out.cols + i]);
  }
  SUBCASE("doubling the batch leaves per-slice outputs unchanged") {
    const auto single = model.forward(std::vector<ImageF>{a});
    const auto doubled = model.forward(std::vector<ImageF>{a, b});
    for (size_t i = 0; i < single.midline_logits.size(); ++i)
      CHECK(std::abs(single.midline_logits[i] - doubled.midline_logits[i]) <= 1e-6);
    for (int y = 0; y < single.rows; ++y)
      CHECK(std::abs(single.limits_prob[static_cast<size_t>(y)] -
                     doubled.limits_prob[static_cast<size_t>(y)]) <= 1e-6);
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(model.forward(std::vector<ImageF>{random_input(16, 32, 1)}), Error);
  }
  SUBCASE("non-finite input is rejected") {
    ImageF bad = a;
    bad(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(model.forward(std::vector<ImageF>{bad}), Error);
  }
}

TEST_CASE("row_softmax") {
  SUBCASE("zero logits give the uniform distribution") {
    const ImageF prob = row_softmax(ImageF(2, 4, 0.0f));
    for (float p : prob.data) CHECK(p == doctest::Approx(0.25));
  }
  SUBCASE("closed form for (0, ln 3)") {
    ImageF logits(1, 2, 0.0f);
    logits(0, 1) = std::log(3.0f);
    const ImageF prob = row_softmax(logits);
    CHECK(prob(0, 0) == doctest::Approx(0.25));
    CHECK(prob(0, 1) == doctest::Approx(0.75));
  }
  SUBCASE("per-row shift invariance") {
    std::mt19937_64 rng(42);
    std::normal_distribution<float> gauss(0.0f, 2.0f);
    ImageF logits(4, 9);
    for (auto& v : logits.data) v = gauss(rng);
    ImageF shifted = logits;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 9; ++x) shifted(y, x) += 1.25f * (y + 1);
    const ImageF p0 = row_softmax(logits), p1 = row_softmax(shifted);
    for (size_t i = 0; i < p0.size(); ++i) CHECK(std::abs(p0.data[i] - p1.data[i]) <= 1e-7);
  }
  SUBCASE("monotone within a row") {
    std::mt19937_64 rng(43);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    ImageF logits(1, 12);
    for (auto& v : logits.data) v = gauss(rng);
    const ImageF prob = row_softmax(logits);
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j)
        if (logits(0, i) > logits(0, j)) CHECK(prob(0, i) > prob(0, j));
  }
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = small_config();
  const Model model(cfg);
  const auto dir = fs::temp_directory_path() / "midline_ckpt";
  fs::create_directories(dir);
  model.save(dir / "m.ckpt");

  const Model back = Model::load(dir / "m.ckpt");
  CHECK(back.config().depth == cfg.depth);
  CHECK(back.parameter_count() == model.parameter_count());
  const ImageF input = random_input(32, 32, 77);
  const auto a = model.forward(std::vector<ImageF>{input});
  const auto b = back.forward(std::vector<ImageF>{input});
  CHECK(a.midline_logits == b.midline_logits);
  CHECK(a.limits_prob == b.limits_prob);

  SUBCASE("bad magic is rejected") {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "not a checkpoint";
    out.close();
    CHECK_THROWS_AS(Model::load(dir / "junk.ckpt"), Error);
  }
}
