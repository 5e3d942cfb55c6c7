#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "specdiff/config/config.hpp"
#include "specdiff/data/features.hpp"
#include "specdiff/error.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "specdiff/synth/synthesis.hpp"
#include "specdiff/train/trainer.hpp"
#include "support/toy_corpus.hpp"

using namespace specdiff;
using namespace specdiff::synth;
using nn::Tensor;
namespace fs = std::filesystem;
namespace st = specdiff::testing;

namespace {

config::RunConfig tiny_config() {
  return config::validate_config(fs::path(SPECDIFF_SOURCE_DIR) / "configs" / "tiny.cfg");
}

data::NormStats unit_stats(int channels) {
  data::NormStats s;
  s.mel_mean.assign(channels, -4.0);
  s.mel_std.assign(channels, 2.0);
  return s;
}

Synthesizer make_synth(const config::RunConfig& cfg, std::uint64_t seed = 3) {
  Rng rng(seed);
  auto g = std::make_unique<model::Generator>(cfg.model, cfg.feature.n_mels, std::vector<std::string>{"a", "b"}, rng);
  return Synthesizer(std::move(g), cfg, unit_stats(cfg.feature.n_mels));
}

SynthesisRequest request(std::uint64_t seed = 11) {
  SynthesisRequest r;
  r.phonemes = {"sil", "HH", "AH0", "L", "OW1", "sil"};
  r.speaker = "b";
  r.seed = seed;
  r.duration_override = std::vector<int>{3, 4, 5, 4, 6, 2};
  return r;
}

// Magnitude of the DFT of x at `hz`, evaluated directly.
double dft_magnitude(const std::vector<double>& x, double hz, int sr) {
  double re = 0.0, im = 0.0;
  const double w = 2.0 * std::numbers::pi * hz / sr;
  for (std::size_t n = 0; n < x.size(); ++n) {
    re += x[n] * std::cos(w * n);
    im -= x[n] * std::sin(w * n);
  }
  return std::hypot(re, im);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("specdiff_synth_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Synthesis, DumpedStepsHaveOneMelPerStep) {
  const auto cfg = tiny_config();
  const Synthesizer s = make_synth(cfg);
  auto req = request();
  req.dump_steps = true;
  const auto out = s.synthesize(req);
  ASSERT_EQ(out.steps.size(), static_cast<std::size_t>(cfg.diffusion.steps + 1));
  for (const auto& m : out.steps) EXPECT_EQ(m.shape, (nn::Shape{24, 80}));
  EXPECT_EQ(out.steps.back().data, out.mel.data);
  EXPECT_EQ(out.times.decode.size(), static_cast<std::size_t>(cfg.diffusion.steps));
  EXPECT_TRUE(s.synthesize(request()).steps.empty());
}

TEST(Synthesis, DurationOverrideSetsFrameCount) {
  const Synthesizer s = make_synth(tiny_config());
  auto req = request();
  req.duration_override = std::vector<int>{10, 20, 30, 20, 30, 10};
  const auto out = s.synthesize(req);
  EXPECT_EQ(out.mel.shape, (nn::Shape{120, 80}));
  EXPECT_EQ(out.durations, *req.duration_override);

  req.duration_override = std::vector<int>{1, 2};
  EXPECT_THROW(s.synthesize(req), DataError);
}

TEST(Synthesis, PredictedDurationsWhenNotOverridden) {
  const Synthesizer s = make_synth(tiny_config());
  auto req = request();
  req.duration_override.reset();
  const auto out = s.synthesize(req);
  ASSERT_EQ(out.durations.size(), req.phonemes.size());
  int sum = 0;
  for (int d : out.durations) {
    EXPECT_GE(d, 1);
    sum += d;
  }
  EXPECT_EQ(out.mel.dim(0), sum);
}

TEST(Synthesis, SeedDeterminism) {
  const Synthesizer s = make_synth(tiny_config());
  const auto a = s.synthesize(request(5));
  const auto b = s.synthesize(request(5));
  const auto c = s.synthesize(request(6));
  EXPECT_EQ(a.mel.data, b.mel.data);
  EXPECT_NE(a.mel.data, c.mel.data);
}

TEST(Synthesis, RejectsUnknownInputs) {
  const Synthesizer s = make_synth(tiny_config());
  auto req = request();
  req.speaker = "nobody";
  EXPECT_THROW(s.synthesize(req), DataError);
  req = request();
  req.phonemes[1] = "QQ7";
  EXPECT_THROW(s.synthesize(req), DataError);
}

TEST(Synthesis, CheckpointLoadMatchesInMemoryModel) {
  const auto dir = scratch("ckpt");
  const auto manifest = st::write_toy_corpus(dir / "src", st::ToyCorpusSpec{.utterances = 4});
  auto cfg = tiny_config();
  cfg.train.val_count = 1;
  data::preprocess(cfg, manifest, dir / "data", 1, 1);
  const auto ds = data::load_dataset(dir / "data");
  auto state = train::initial_state(cfg, ds);
  train::save_checkpoint(dir / "init.ckpt", state);

  const Synthesizer from_file(dir / "init.ckpt");
  const Synthesizer in_memory(std::move(state.models.generator), state.config, state.stats);
  SynthesisRequest req = request();
  req.speaker = "spk1";
  EXPECT_EQ(from_file.synthesize(req).mel.data, in_memory.synthesize(req).mel.data);

  CorpusSynthesisOptions opt{dir / "gen"};
  const auto ids = synthesize_corpus(from_file, ds, {0, 2}, opt);
  ASSERT_EQ(ids.size(), 2u);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto shape = io::peek_shape(dir / "gen" / (ids[k] + ".bin"));
    EXPECT_EQ(shape, ds.utterances[k * 2].mel.shape);
    std::ifstream side(dir / "gen" / (ids[k] + ".json"));
    const auto j = nlohmann::json::parse(side);
    EXPECT_GT(j.at("rtf").get<double>(), 0.0);
  }
  fs::remove_all(dir);
}

TEST(Rtf, DefinitionAndBreakdown) {
  const auto cfg = tiny_config();
  const Synthesizer s = make_synth(cfg);
  const auto r = measure_rtf(s, request(), 3);
  EXPECT_EQ(r.repetitions, 3);
  EXPECT_EQ(r.frames, 24);
  EXPECT_NEAR(r.audio_seconds, 24.0 * cfg.feature.hop / cfg.feature.sample_rate, 1e-12);
  EXPECT_NEAR(r.rtf, r.median_seconds / r.audio_seconds, 1e-12);
  EXPECT_EQ(r.breakdown.decode.size(), 4u);
  EXPECT_GT(r.breakdown.total, 0.0);
  const std::string text = r.to_text();
  EXPECT_NE(text.find("rtf"), std::string::npos);
  EXPECT_NE(text.find("decode"), std::string::npos);
  // 0.5 s of work for 2.0 s of audio
  RtfReport hand;
  hand.median_seconds = 0.5;
  hand.audio_seconds = 2.0;
  EXPECT_DOUBLE_EQ(hand.median_seconds / hand.audio_seconds, 0.25);
}

TEST(Rtf, DumpingStepsBarelyChangesTiming) {
  auto cfg = tiny_config();
  cfg.model.residual_channels = 32;
  cfg.model.residual_blocks = 4;
  const Synthesizer s = make_synth(cfg);
  auto req = request();
  req.duration_override = std::vector<int>{40, 40, 40, 40, 40, 40};
  const double plain = measure_rtf(s, req, 9).rtf;
  req.dump_steps = true;
  const double dumped = measure_rtf(s, req, 9).rtf;
  EXPECT_LT(std::abs(dumped - plain) / plain, 0.10) << plain << " vs " << dumped;
}

TEST(Export, HeaderDeclaresShape) {
  const auto dir = scratch("export");
  const config::FeatureConfig f;
  Tensor mel({80, 80}, -3.0);
  export_mel(dir / "m.bin", mel, f, {{"rtf", 0.01}});
  EXPECT_EQ(io::peek_shape(dir / "m.bin"), (nn::Shape{80, 80}));
  const auto back = io::load_tensor(dir / "m.bin");
  EXPECT_FLOAT_EQ(static_cast<float>(back[17]), -3.0f);
  std::ifstream side(sidecar_path(dir / "m.bin"));
  const auto j = nlohmann::json::parse(side);
  EXPECT_EQ(j.at("n_mels").get<int>(), 80);
  EXPECT_EQ(j.at("frames").get<int>(), 80);
  EXPECT_EQ(j.at("hop").get<int>(), 256);
  EXPECT_DOUBLE_EQ(j.at("rtf").get<double>(), 0.01);
  EXPECT_THROW(export_mel(dir / "n.bin", Tensor({10, 40}), f), Error);
  fs::remove_all(dir);
}

TEST(GriffinLim, ToneSurvivesRoundTrip) {
  const config::FeatureConfig f;
  const int sr = f.sample_rate;
  std::vector<double> x(sr);
  for (int n = 0; n < sr; ++n) x[n] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * n / sr);
  const Tensor mel = data::extract_mel(x, f);
  const auto y = griffin_lim(mel_to_linear(mel, f), f, 32, 1);
  const int frames = mel.dim(0);
  EXPECT_EQ(y.size(), static_cast<std::size_t>(frames - 1) * f.hop);
  EXPECT_LE(std::abs(static_cast<double>(y.size()) - static_cast<double>(frames) * f.hop), f.hop);

  // 4096-point DFT over the middle of the output
  const int n = 4096;
  const std::vector<double> mid(y.begin() + (y.size() - n) / 2, y.begin() + (y.size() - n) / 2 + n);
  const double bin = static_cast<double>(sr) / n;
  int best = 0;
  double best_mag = -1.0;
  for (int k = 1; k < n / 2; ++k) {
    const double m = dft_magnitude(mid, k * bin, sr);
    if (m > best_mag) {
      best_mag = m;
      best = k;
    }
  }
  EXPECT_LE(std::abs(best * bin - 440.0), 2.0 * bin) << "peak at " << best * bin << " Hz";
}

TEST(GriffinLim, RenderedWavHasFramingLength) {
  const auto dir = scratch("render");
  const config::FeatureConfig f;
  Rng rng(2);
  Tensor mel({30, 80});
  for (auto& v : mel.data) v = -6.0 + rng.uniform();
  render_wav(dir / "x.wav", mel, f, 4, 1);
  const auto w = data::read_wav(dir / "x.wav");
  EXPECT_EQ(w.sample_rate, f.sample_rate);
  EXPECT_EQ(w.samples.size(), static_cast<std::size_t>(29 * f.hop));
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  EXPECT_LE(peak, 1.0);
  fs::remove_all(dir);
}
