#pragma once

#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/nn/layers.hpp"

namespace specdiff::model {

struct DiscriminatorOutput {
  nn::Var score;                   // [B]
  std::vector<nn::Var> features;  // intermediate maps, fixed count per architecture
};

/// D_d(x_{t-1}, x_t, t). Inputs are [B, F, n_mels] with padded frames zeroed.
class DiffusionCritic {
 public:
  virtual ~DiffusionCritic() = default;
  /// `speaker` [B, speaker_dim] is consulted only when uses_speaker() is true.
  virtual DiscriminatorOutput forward(const nn::Var& x_prev, const nn::Var& x_t, const std::vector<int>& t,
                                      const nn::Var& speaker) const = 0;
  virtual bool uses_speaker() const = 0;
  virtual nn::ParameterSet& params() = 0;
};

/// D_s(x_0, s).
class SpectrogramCritic {
 public:
  virtual ~SpectrogramCritic() = default;
  virtual DiscriminatorOutput forward(const nn::Var& x0, const nn::Var& speaker) const = 0;
  virtual nn::ParameterSet& params() = 0;
};

/// Stack of downsampling blocks over the (frame, mel-bin) plane. Each block
/// adds a timestep projection on its conditioned path, convolves and pools,
/// and averages in a pooled 1x1 shortcut; block outputs are the features.
class DiffusionDiscriminator : public DiffusionCritic {
 public:
  DiffusionDiscriminator(const config::ModelConfig& cfg, bool use_speaker, Rng& rng);

  DiscriminatorOutput forward(const nn::Var& x_prev, const nn::Var& x_t, const std::vector<int>& t,
                              const nn::Var& speaker) const override;
  bool uses_speaker() const override { return use_speaker_; }
  nn::ParameterSet& params() override { return params_; }
  /// Output channels of block i.
  int block_channels(int i) const;

 private:
  struct Block {
    nn::Linear time;
    nn::Linear speaker;
    nn::Conv2d conv;
    nn::Conv2d shortcut;
  };

  config::ModelConfig cfg_;
  bool use_speaker_;
  int time_dim_;
  nn::ParameterSet params_;
  nn::Conv2d input_;
  nn::Linear time1_, time2_;
  std::vector<Block> blocks_;
  nn::Conv2d head_conv_;
  nn::Linear head_out_;
};

/// Speaker-conditioned stack of strided then plain 2-D convolutions.
class SpectrogramDiscriminator : public SpectrogramCritic {
 public:
  SpectrogramDiscriminator(const config::ModelConfig& cfg, Rng& rng);

  DiscriminatorOutput forward(const nn::Var& x0, const nn::Var& speaker) const override;
  nn::ParameterSet& params() override { return params_; }

 private:
  config::ModelConfig cfg_;
  nn::ParameterSet params_;
  nn::Conv2d input_;
  nn::Linear speaker_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear head_;
};

}  // namespace specdiff::model
