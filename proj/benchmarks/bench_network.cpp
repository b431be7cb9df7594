#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "midline/network.hpp"
#include "midline/synth.hpp"
#include "midline/training.hpp"

namespace {

midline::ImageF random_slice(int rows, int cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  midline::ImageF img(rows, cols);
  for (auto& v : img.data) v = gauss(rng);
  return img;
}

void ForwardDesk(benchmark::State& state) {
  midline::ModelConfig cfg;  // 160x160, depth 3, base 16
  const midline::Model model(cfg);
  std::vector<midline::ImageF> batch;
  for (int i = 0; i < state.range(0); ++i) batch.push_back(random_slice(160, 160, 10 + i));
  for (auto _ : state) {
    auto out = model.forward(batch);
    benchmark::DoNotOptimize(out.midline_prob.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(ForwardDesk)->Arg(1)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void TrainIterationDesk(benchmark::State& state) {
  const auto data = midline::gen_dataset(4, 4, {}, 3);
  std::vector<midline::TrainSample> samples;
  midline::ModelConfig cfg;
  for (const auto& item : data) {
    // phantoms are already at 0.5 mm; feed them through as-is
    for (size_t i = 0; i < item.study.slices.size(); ++i)
      samples.push_back({item.study.slices[i], item.annotation.slices[i]});
  }
  midline::TrainConfig tc;
  tc.batch_size = static_cast<int>(state.range(0));
  tc.validation_every = 0;
  for (auto _ : state) {
    tc.iterations = 1;
    auto result = midline::train(samples, {}, tc, cfg);
    benchmark::DoNotOptimize(result.history.data());
  }
}
BENCHMARK(TrainIterationDesk)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
