#include <benchmark/benchmark.h>

#include <filesystem>

#include "specdiff/config/config.hpp"
#include "specdiff/diffusion/schedule.hpp"
#include "specdiff/synth/synthesis.hpp"
#include "specdiff/train/trainer.hpp"

using namespace specdiff;
using nn::Tensor;
using nn::Var;

static config::RunConfig desk() {
  return config::validate_config(std::filesystem::path(SPECDIFF_SOURCE_DIR) / "configs" / "desk.cfg");
}

static data::NormStats flat_stats(int channels) {
  data::NormStats s;
  s.mel_mean.assign(channels, -5.0);
  s.mel_std.assign(channels, 2.0);
  return s;
}

// phoneme sequence whose durations sum to `frames`
static synth::SynthesisRequest request(int frames) {
  synth::SynthesisRequest r;
  const std::vector<std::string> cycle = {"HH", "AH0", "L", "OW1", "S", "IY1", "T"};
  std::vector<int> d;
  for (int left = frames, k = 0; left > 0; ++k) {
    const int n = std::min(left, 6);
    r.phonemes.push_back(cycle[k % cycle.size()]);
    d.push_back(n);
    left -= n;
  }
  r.duration_override = d;
  r.speaker = "a";
  r.seed = 1;
  return r;
}

static void BM_Schedule(benchmark::State& state) {
  const auto spec = diffusion::ScheduleSpec::parse("vp:0.1:40");
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::build_schedule(static_cast<int>(state.range(0)), spec));
}
BENCHMARK(BM_Schedule)->Arg(4)->Arg(100);

static void BM_PosteriorSample(benchmark::State& state) {
  const auto s = diffusion::build_schedule(4, diffusion::ScheduleSpec::parse("vp:0.1:40"));
  Rng rng(1);
  const int frames = static_cast<int>(state.range(0));
  const Tensor x_t = diffusion::standard_normal({frames, 80}, rng);
  const Tensor x0 = diffusion::standard_normal({frames, 80}, rng);
  const Tensor noise = diffusion::standard_normal({frames, 80}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::posterior_sample(x_t, x0, 3, s, noise));
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_PosteriorSample)->Arg(200)->Arg(800);

static void BM_Synthesize(benchmark::State& state) {
  const auto cfg = desk();
  Rng rng(2);
  auto g = std::make_unique<model::Generator>(cfg.model, cfg.feature.n_mels, std::vector<std::string>{"a"}, rng);
  const synth::Synthesizer s(std::move(g), cfg, flat_stats(cfg.feature.n_mels));
  const auto req = request(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(s.synthesize(req));
  state.counters["frames/s"] = benchmark::Counter(static_cast<double>(state.iterations() * state.range(0)),
                                                  benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Synthesize)->Unit(benchmark::kMillisecond)->Arg(100)->Arg(400);

static void BM_DecoderStep(benchmark::State& state) {
  const auto cfg = desk();
  Rng rng(3);
  const model::Generator g(cfg.model, cfg.feature.n_mels, {"a"}, rng);
  const auto req = request(static_cast<int>(state.range(0)));
  model::TextBatch text;
  text.speakers = {0};
  text.phonemes.emplace_back();
  for (const auto& p : req.phonemes) {
    const auto it = std::find(cfg.model.vocab.begin(), cfg.model.vocab.end(), p);
    text.phonemes.back().push_back(static_cast<int>(it - cfg.model.vocab.begin()));
  }
  model::VarianceTargets targets;
  targets.durations = {*req.duration_override};
  nn::NoGradGuard guard;
  const auto cond = g.condition(text, model::Mode::kInfer, &targets);
  const Var x = Var::constant(diffusion::standard_normal({1, static_cast<int>(state.range(0)), 80}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(g.diffusion_decode(x, cond, {2}));
}
BENCHMARK(BM_DecoderStep)->Unit(benchmark::kMillisecond)->Arg(100)->Arg(400);

static void BM_TrainStep(benchmark::State& state) {
  auto cfg = desk();
  Rng init(4), rng(5);
  auto models = train::build_models(cfg, {"a", "b"}, init);
  auto opt = train::build_optimizers(cfg.train, models);
  const auto sched = diffusion::build_schedule(4, diffusion::ScheduleSpec::parse(cfg.diffusion.schedule));
  const int frames = static_cast<int>(state.range(0));
  train::Batch b;
  for (int k = 0; k < 2; ++k) {
    b.ids.push_back("u" + std::to_string(k));
    b.text.phonemes.push_back({3, 8, 14, 20});
    b.text.speakers.push_back(k);
    b.targets.durations.push_back({frames / 4, frames / 4, frames / 4, frames - 3 * (frames / 4)});
    b.targets.pitch.push_back({0.1, -0.3, 0.4, 0.0});
    b.targets.energy.push_back({0.2, 0.1, -0.2, 0.5});
    b.targets.mel_frames.push_back(frames);
    b.frames.push_back(frames);
    b.phoneme_lengths.push_back(4);
    b.variance_lengths.push_back(4);
  }
  b.mel = diffusion::standard_normal({2, frames, 80}, rng);
  for (auto _ : state) {
    const auto s = train::prepare_step(b, models, sched, cfg, rng);
    auto report = train::train_step_d(s, models, opt, cfg);
    train::train_step_g(b, s, models, opt, cfg, report);
    benchmark::DoNotOptimize(report.l_g);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Arg(64)->Arg(160);

BENCHMARK_MAIN();
