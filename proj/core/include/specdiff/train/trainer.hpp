#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/data/corpus.hpp"
#include "specdiff/diffusion/schedule.hpp"
#include "specdiff/losses/losses.hpp"
#include "specdiff/model/discriminators.hpp"
#include "specdiff/model/generator.hpp"
#include "specdiff/nn/adam.hpp"

namespace specdiff::train {

/// Uniform draws on {1..T}.
std::vector<int> sample_timesteps(int batch, int steps, Rng& rng);

/// Zero-padded training batch.
struct Batch {
  std::vector<std::string> ids;
  model::TextBatch text;
  model::VarianceTargets targets;
  nn::Tensor mel;  // [B, F_max, n_mels]
  std::vector<int> frames;
  std::vector<int> phoneme_lengths;
  std::vector<int> variance_lengths;

  int size() const { return static_cast<int>(ids.size()); }
};

/// `speakers` gives the speaker index order used by the generator.
Batch make_batch(const data::Dataset& ds, const std::vector<int>& indices, const std::vector<std::string>& speakers);

/// Length-bucketed sampling: items sorted by frame count, each batch a random
/// window of consecutive items.
class BatchSampler {
 public:
  BatchSampler(const data::Dataset& ds, std::vector<int> pool, int batch_size);
  std::vector<int> next(Rng& rng) const;

 private:
  std::vector<int> sorted_;
  int batch_size_;
};

/// Generator plus the discriminator set selected by the ablation mode.
struct Models {
  std::unique_ptr<model::Generator> generator;
  std::unique_ptr<model::DiffusionCritic> diffusion;
  /// Null when the ablation removes the spectrogram discriminator.
  std::unique_ptr<model::SpectrogramCritic> spectrogram;
};

/// Builds the three networks from one seeded source. Precomputed speaker
/// embeddings are loaded from cfg.paths.speaker_embeddings when that mode is set.
Models build_models(const config::RunConfig& cfg, const std::vector<std::string>& speakers, Rng& init);

/// Effective mixing ratio: the configured alpha, or 1 without D_s.
double effective_alpha(const config::RunConfig& cfg);

struct Optimizers {
  std::unique_ptr<nn::Adam> generator;
  std::unique_ptr<nn::Adam> diffusion;
  std::unique_ptr<nn::Adam> spectrogram;
};
Optimizers build_optimizers(const config::TrainConfig& cfg, Models& models);

/// Quantities shared by the discriminator and generator halves of one step.
struct StepState {
  std::vector<int> t;
  nn::Tensor x0;          // real clean mel
  nn::Tensor x_prev;      // real x_{t-1}
  nn::Tensor x_t;         // real x_t
  model::Generator::Output g;  // one forward with gradient
  nn::Var fake_prev;      // posterior sample from the generator's x0 prediction
  nn::Var fake_x0;        // one-shot prediction or full rollout
  nn::Var speaker;        // detached speaker embeddings for the critics
};

/// Draws t and noise, builds the real pair and runs the generator once.
/// With exact_t_sum the batch must come from expand_over_timesteps and item j
/// uses t = j mod T + 1.
StepState prepare_step(const Batch& batch, const Models& models, const diffusion::DiffusionSchedule& schedule,
                       const config::RunConfig& cfg, Rng& rng);

/// One update of D_d (and D_s unless ablated) on detached fakes. Generator
/// parameters are frozen for the duration.
losses::LossReport train_step_d(const StepState& s, Models& models, Optimizers& opt, const config::RunConfig& cfg);

/// One generator update against frozen discriminators; fills the G side of
/// `report`.
void train_step_g(const Batch& batch, const StepState& s, Models& models, Optimizers& opt,
                  const config::RunConfig& cfg, losses::LossReport& report);

/// Repeats every item once per timestep (item-major) for the exact
/// expectation over t.
Batch expand_over_timesteps(const Batch& b, int steps);

/// Complete training state as persisted in a checkpoint.
struct TrainingState {
  long step = 0;
  config::RunConfig config;
  data::NormStats stats;
  std::vector<std::string> speakers;
  /// Noise and timestep source.
  std::string rng_state;
  /// Batch-order source.
  std::string data_rng_state;
  Models models;
  Optimizers optimizers;
};

/// Creates fresh models and optimizers for a dataset.
TrainingState initial_state(const config::RunConfig& cfg, const data::Dataset& ds);

/// Binary checkpoint: magic, JSON header (step, config dump, rng state,
/// statistics, speakers, code version) then named float64 tensors for every
/// parameter and optimizer moment. Written atomically.
void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);

/// Rebuilds models from the stored config. When `expected` is given, keys
/// that shape the model or the optimisation must agree (ConfigError otherwise).
TrainingState load_checkpoint(const std::filesystem::path& path, const config::RunConfig* expected = nullptr);

/// Keys that may differ between a checkpoint and the config resuming it.
bool resumable_key(const std::string& key);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Receives every LossReport (after logging); may be empty.
  std::function<void(const losses::LossReport&)> on_step;
  /// Stop after this many steps in this call, regardless of total_steps (-1 = no limit).
  long max_steps_this_run = -1;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<losses::LossReport> reports;
  long final_step = 0;
};

/// Alternates one D step and one G step per batch until total_steps; logs
/// every log_interval, checkpoints every checkpoint_interval and at the end.
/// total_steps = 0 writes the initial checkpoint only.
TrainResult run_training(const config::RunConfig& cfg, const data::Dataset& ds, const TrainOptions& options);

}  // namespace specdiff::train
