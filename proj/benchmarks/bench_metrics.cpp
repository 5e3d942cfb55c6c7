#include <benchmark/benchmark.h>

#include <cmath>

#include "specdiff/config/run_config.hpp"
#include "specdiff/data/features.hpp"
#include "specdiff/eval/metrics.hpp"
#include "specdiff/rng.hpp"

using namespace specdiff;
using nn::Tensor;

static Tensor noise(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({rows, cols});
  for (auto& v : t.data) v = rng.normal() - 5.0;
  return t;
}

static void BM_Ssim(benchmark::State& state) {
  const int f = static_cast<int>(state.range(0));
  const Tensor a = noise(f, 80, 1), b = noise(f, 80, 2);
  for (auto _ : state) benchmark::DoNotOptimize(eval::metric_ssim(a, b));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond)->Arg(200)->Arg(800);

static void BM_Cepstrum(benchmark::State& state) {
  const Tensor mel = noise(static_cast<int>(state.range(0)), 80, 3);
  for (auto _ : state) benchmark::DoNotOptimize(eval::mel_cepstrum(mel, 24));
}
BENCHMARK(BM_Cepstrum)->Arg(200)->Arg(800);

static void BM_Dtw(benchmark::State& state) {
  const int f = static_cast<int>(state.range(0));
  const Tensor a = noise(f, 25, 4), b = noise(f + f / 10, 25, 5);
  for (auto _ : state) benchmark::DoNotOptimize(eval::dtw_align(a, b));
  state.SetComplexityN(f);
}
BENCHMARK(BM_Dtw)->Unit(benchmark::kMillisecond)->RangeMultiplier(2)->Range(64, 512)->Complexity(benchmark::oNSquared);

static void BM_MelExtraction(benchmark::State& state) {
  const config::FeatureConfig f;
  const int n = static_cast<int>(state.range(0)) * f.sample_rate;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = 0.3 * std::sin(0.05 * i) + 0.1 * std::sin(0.31 * i);
  for (auto _ : state) benchmark::DoNotOptimize(data::extract_mel(x, f));
  state.SetBytesProcessed(state.iterations() * n * static_cast<long>(sizeof(double)));
}
BENCHMARK(BM_MelExtraction)->Unit(benchmark::kMillisecond)->Arg(1)->Arg(4);

BENCHMARK_MAIN();
