#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/data/corpus.hpp"
#include "specdiff/diffusion/schedule.hpp"
#include "specdiff/model/generator.hpp"
#include "specdiff/nn/tensor.hpp"

namespace specdiff::synth {

struct SynthesisRequest {
  std::vector<std::string> phonemes;
  std::string speaker;
  std::uint64_t seed = 0;
  /// Ground-truth durations for teacher-forced synthesis.
  std::optional<std::vector<int>> duration_override;
  bool dump_steps = false;
};

struct StageTimes {
  double encode = 0.0;
  double adapt = 0.0;
  /// One entry per decoder call, in call order (t = T down to 1).
  std::vector<double> decode;
  double total = 0.0;
};

struct SynthesisResult {
  /// Denormalised log mel, [F, n_mels].
  nn::Tensor mel;
  /// With dump_steps: x_T, x_{T-1}, ..., x_0, each denormalised [F, n_mels].
  std::vector<nn::Tensor> steps;
  std::vector<int> durations;
  StageTimes times;
};

/// Read-only inference over one loaded generator. synthesize() is const and
/// keeps no shared mutable state, so concurrent calls are allowed.
class Synthesizer {
 public:
  explicit Synthesizer(const std::filesystem::path& checkpoint);
  Synthesizer(std::unique_ptr<model::Generator> generator, config::RunConfig cfg, data::NormStats stats);

  SynthesisResult synthesize(const SynthesisRequest& request) const;

  const config::RunConfig& config() const { return cfg_; }
  const model::Generator& generator() const { return *generator_; }
  const diffusion::DiffusionSchedule& schedule() const { return schedule_; }
  const data::NormStats& stats() const { return stats_; }

 private:
  std::shared_ptr<model::Generator> generator_;
  config::RunConfig cfg_;
  data::NormStats stats_;
  diffusion::DiffusionSchedule schedule_;
};

struct RtfReport {
  double rtf = 0.0;
  double median_seconds = 0.0;
  double audio_seconds = 0.0;
  int frames = 0;
  int repetitions = 0;
  /// Median per stage over the timed repetitions.
  StageTimes breakdown;

  std::string to_text() const;
};

/// Runs repetitions + 1 syntheses, discards the first as warm-up and divides
/// the median wall time by F * hop / sample_rate.
RtfReport measure_rtf(const Synthesizer& synth, const SynthesisRequest& request, int repetitions);

/// Writes a [F, n_mels] log mel as a float32 container plus a JSON sidecar
/// describing the analysis settings (plus `extra`). Rejects n_mels != 80, the
/// vocoder profile.
void export_mel(const std::filesystem::path& path, const nn::Tensor& mel, const config::FeatureConfig& feature,
                const std::map<std::string, double>& extra = {});

/// Sidecar path for an exported mel: the extension replaced by ".json".
std::filesystem::path sidecar_path(const std::filesystem::path& mel_path);

/// Non-negative least-squares inversion of the mel filterbank, log mel
/// [F, n_mels] to linear magnitudes [F, n_fft / 2 + 1].
nn::Tensor mel_to_linear(const nn::Tensor& log_mel, const config::FeatureConfig& feature);

/// Iterative phase reconstruction; output has (F - 1) * hop samples.
std::vector<double> griffin_lim(const nn::Tensor& magnitudes, const config::FeatureConfig& feature, int iterations,
                                std::uint64_t seed);

/// mel_to_linear then griffin_lim, written as 16-bit PCM.
void render_wav(const std::filesystem::path& path, const nn::Tensor& log_mel, const config::FeatureConfig& feature,
                int iterations, std::uint64_t seed);

struct CorpusSynthesisOptions {
  std::filesystem::path out_dir;
  /// Use ground-truth durations (frame-aligned evaluation).
  bool teacher_forced = true;
  bool write_wav = false;
  std::uint64_t seed = 0;
};

/// Synthesises every listed utterance to `<out_dir>/<id>.bin` with a
/// `<id>.json` sidecar holding its RTF. Returns the ids written.
std::vector<std::string> synthesize_corpus(const Synthesizer& synth, const data::Dataset& ds,
                                           const std::vector<int>& indices, const CorpusSynthesisOptions& options);

}  // namespace specdiff::synth
