#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "midline/network.hpp"
#include "midline/synth.hpp"
#include "midline/training.hpp"

using namespace midline;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_rows = 32;
  cfg.input_cols = 32;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.shared_layers = 1;
  cfg.seed = 1;
  return cfg;
}

NetworkOutputs outputs_from(const ImageF& prob, const std::vector<float>& limits) {
  NetworkOutputs out;
  out.batch = 1;
  out.rows = prob.rows;
  out.cols = prob.cols;
  out.midline_prob = prob.data;
  out.midline_logits.assign(prob.size(), 0.0f);
  out.limits_prob = limits;
  return out;
}

MidlineAnnotation ann_of(int y_lo, std::vector<double> xs) {
  MidlineAnnotation a;
  a.interval = Interval::of(y_lo, y_lo + static_cast<int>(xs.size()) - 1);
  a.xs = std::move(xs);
  return a;
}

std::vector<TrainSample> tiny_synthetic_samples(int n, uint64_t seed) {
  std::vector<TrainSample> samples;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    PhantomParams p;
    p.rows = 32;
    p.cols = 32;
    p.ellipse_cx = 16.0 + 2.0 * unif(rng) - 1.0;
    p.ellipse_cy = 16.0;
    p.semi_x = 11.0 + 2.0 * unif(rng);
    p.semi_y = 13.0;
    p.midline_x0 = p.ellipse_cx + 0.5 * unif(rng) - 0.25;
    p.bump_amp_px = unif(rng) < 0.5 ? 0.0 : 3.0 + 2.0 * unif(rng);
    p.bump_center_y = 16.0;
    p.bump_sigma = 4.0;
    p.seed = seed * 1000 + static_cast<uint64_t>(i);
    auto [img, ann] = gen_slice(p);
    // z-score over the whole crop keeps these tiny fixtures simple
    double mean = 0.0;
    for (float v : img.data) mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (float v : img.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.size());
    for (auto& v : img.data) v = static_cast<float>((v - mean) / std::sqrt(var));
    samples.push_back({std::move(img), std::move(ann)});
  }
  return samples;
}

}  // namespace

TEST_CASE("combined_loss worked examples") {
  SUBCASE("one-hot rows at the ground truth give zero loss") {
    const int H = 4, W = 5;
    ImageF prob(H, W, 0.0f);
    const auto ann = ann_of(0, {1.0, 2.0, 3.0, 1.0});
    for (int y = 0; y < H; ++y) prob(y, static_cast<int>(ann.x_at(y))) = 1.0f;
    const std::vector<float> limits(static_cast<size_t>(H), 1.0f);
    const auto parts = combined_loss(outputs_from(prob, limits), std::vector{ann});
    CHECK(parts.reg == doctest::Approx(0.0));
    CHECK(parts.bce <= 1e-6);  // at the clamp floor
  }
  SUBCASE("uniform rows still match the target expectation by symmetry") {
    const int H = 3, W = 5;
    ImageF prob(H, W, 0.2f);
    const auto ann = ann_of(0, {2.0, 2.0, 2.0});
    const std::vector<float> limits(static_cast<size_t>(H), 1.0f);
    const auto parts = combined_loss(outputs_from(prob, limits), std::vector{ann});
    CHECK(parts.reg == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("hand-computed single row") {
    ImageF prob(1, 3, 0.0f);
    prob(0, 0) = 0.5f;
    prob(0, 1) = 0.5f;
    const auto ann = ann_of(0, {2.0});
    const std::vector<float> limits{0.8f};
    const auto parts = combined_loss(outputs_from(prob, limits), std::vector{ann});
    CHECK(parts.reg == doctest::Approx(2.25));            // (2 - 0.5)^2
    CHECK(parts.bce == doctest::Approx(-std::log(0.8)));  // single row, target 1
    CHECK(parts.total == doctest::Approx(2.25 - std::log(0.8)));
  }
  SUBCASE("weights scale the terms") {
    ImageF prob(1, 3, 0.0f);
    prob(0, 2) = 1.0f;
    const auto ann = ann_of(0, {0.0});
    const std::vector<float> limits{0.5f};
    const auto parts =
        combined_loss(outputs_from(prob, limits), std::vector{ann}, {2.0, 3.0});
    CHECK(parts.total == doctest::Approx(2.0 * parts.reg + 3.0 * parts.bce));
  }
  SUBCASE("empty-interval slices contribute only to the limits term") {
    ImageF prob(2, 4, 0.25f);
    const MidlineAnnotation empty;
    const std::vector<float> limits{0.3f, 0.3f};
    const auto parts = combined_loss(outputs_from(prob, limits), std::vector{empty});
    CHECK(parts.reg == doctest::Approx(0.0));
    CHECK(parts.bce == doctest::Approx(-std::log(0.7)));
  }
}

TEST_CASE("slice loss gradients match finite differences (logits as parameters)") {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> gauss(0.0, 1.5);
  const int H = 6, W = 7;
  Grid<double> logits(H, W);
  for (auto& v : logits.data) v = gauss(rng);
  std::vector<double> lim(static_cast<size_t>(H));
  for (auto& v : lim) v = gauss(rng);
  const auto ann = ann_of(1, {2.0, 4.5, 3.0});
  const LossWeights w{1.3, 0.7};

  Grid<double> dlogits;
  std::vector<double> dlim;
  slice_loss_gradients(logits, lim, ann, w, 1, &dlogits, &dlim);

  const double eps = 1e-6;
  double max_rel = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      Grid<double> lp = logits, lm = logits;
      lp(y, x) += eps;
      lm(y, x) -= eps;
      const double fd = (slice_loss_from_logits(lp, lim, ann, w).total -
                         slice_loss_from_logits(lm, lim, ann, w).total) /
                        (2 * eps);
      const double a = dlogits(y, x);
      max_rel = std::max(max_rel, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-8}));
    }
  for (int y = 0; y < H; ++y) {
    auto lp = lim, lm = lim;
    lp[static_cast<size_t>(y)] += eps;
    lm[static_cast<size_t>(y)] -= eps;
    const double fd = (slice_loss_from_logits(logits, lp, ann, w).total -
                       slice_loss_from_logits(logits, lm, ann, w).total) /
                      (2 * eps);
    const double a = dlim[static_cast<size_t>(y)];
    max_rel = std::max(max_rel, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-8}));
  }
  CHECK(max_rel <= 1e-6);
}

TEST_CASE("zero loss weights give an exactly zero analytic gradient") {
  const auto cfg = tiny_config();
  const Model model(cfg);
  const auto samples = tiny_synthetic_samples(2, 4);
  const auto result = grad_check(model, samples, {0.0, 0.0}, 1e-3, 40, 9);
  CHECK(result.analytic_grad_max_abs == 0.0);
}

TEST_CASE("grad_check on a small model") {
  const auto cfg = tiny_config();
  const Model model(cfg);
  const auto samples = tiny_synthetic_samples(2, 5);
  const auto result = grad_check(model, samples, {1.0, 1.0}, 1e-3, 60, 3);
  CHECK(result.parameters_checked == 60);
  CHECK(result.max_relative_error <= 1e-3);
  CHECK(result.analytic_grad_max_abs > 0.0);
}

TEST_CASE("train basics") {
  const auto cfg = tiny_config();
  auto samples = tiny_synthetic_samples(8, 6);

  SUBCASE("lr = 0 is a fixed point") {
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.iterations = 1;
    tc.batch_size = 2;
    tc.seed = 3;
    const auto result = train(samples, {}, tc, cfg);
    const auto dir = fs::temp_directory_path() / "midline_lr0";
    fs::create_directories(dir);
    result.model.save(dir / "trained.ckpt");
    Model(cfg).save(dir / "fresh.ckpt");
    std::ifstream a(dir / "trained.ckpt", std::ios::binary), b(dir / "fresh.ckpt", std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }
  SUBCASE("identical seeds reproduce the loss history") {
    TrainConfig tc;
    tc.iterations = 6;
    tc.batch_size = 2;
    tc.seed = 11;
    tc.validation_every = 3;
    const auto a = train(samples, samples, tc, cfg);
    const auto b = train(samples, samples, tc, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
      CHECK(std::abs(a.history[i].total - b.history[i].total) <= 1e-6);
      CHECK(a.history[i].val_rmses.has_value() == b.history[i].val_rmses.has_value());
      if (a.history[i].val_rmses)
        CHECK(std::abs(*a.history[i].val_rmses - *b.history[i].val_rmses) <= 1e-6);
    }
  }
  SUBCASE("loss decreases on a learnable fixture") {
    TrainConfig tc;
    tc.iterations = 60;
    tc.batch_size = 4;
    tc.seed = 2;
    const auto result = train(samples, {}, tc, cfg);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 5; ++i) {
      early += result.history[static_cast<size_t>(i)].total;
      late += result.history[result.history.size() - 1 - static_cast<size_t>(i)].total;
    }
    CHECK(late < early);
  }
  SUBCASE("empty dataset is rejected") {
    TrainConfig tc;
    CHECK_THROWS_AS(train({}, {}, tc, cfg), Error);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.beta1 = 1.0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.flip_prob = 1.5;
  CHECK_THROWS_AS(tc.validate(), Error);
}

TEST_CASE("config file parsing") {
  const auto dir = fs::temp_directory_path() / "midline_cfg";
  fs::create_directories(dir);
  const auto path = dir / "train.toml";
  {
    std::ofstream out(path);
    out << "# desk-scale run\n"
           "learning_rate = 0.0005\n"
           "batch_size = 4\n"
           "iterations = 123\n"
           "flip_prob = 0.25  # joint image/target flip\n"
           "lambda1 = 1.0\n"
           "lambda2 = 2.0\n"
           "input_rows = 64\n"
           "input_cols = 64\n"
           "depth = 2\n"
           "base_channels = 8\n"
           "shared_layers = 1\n"
           "seed = 9\n";
  }
  const auto [tc, mc] = parse_train_config_file(path);
  CHECK(tc.learning_rate == doctest::Approx(0.0005));
  CHECK(tc.batch_size == 4);
  CHECK(tc.iterations == 123);
  CHECK(tc.flip_prob == doctest::Approx(0.25));
  CHECK(tc.weights.lambda2 == doctest::Approx(2.0));
  CHECK(tc.seed == 9);
  CHECK(mc.input_rows == 64);
  CHECK(mc.depth == 2);
  CHECK(mc.base_channels == 8);

  {
    std::ofstream out(path);
    out << "unknown_key = 1\n";
  }
  CHECK_THROWS_AS(parse_train_config_file(path), Error);
}

TEST_CASE("history CSV") {
  const auto dir = fs::temp_directory_path() / "midline_csv";
  fs::create_directories(dir);
  std::vector<HistoryRow> history{{1, 2.5, 2.0, 0.5, std::nullopt}, {2, 1.5, 1.0, 0.5, 0.75}};
  write_history_csv(dir / "h.csv", history);
  std::ifstream in(dir / "h.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,total,reg,bce,val_rmses");
  std::getline(in, line);
  CHECK(line == "1,2.5,2,0.5,");
  std::getline(in, line);
  CHECK(line == "2,1.5,1,0.5,0.75");
}
