#pragma once

#include <string>
#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/model/speaker.hpp"
#include "specdiff/nn/layers.hpp"

namespace specdiff::model {

enum class Mode { kTrain, kInfer };

/// Padded batch of phoneme id sequences with one speaker index per item.
struct TextBatch {
  std::vector<std::vector<int>> phonemes;
  std::vector<int> speakers;

  int batch() const { return static_cast<int>(phonemes.size()); }
  int max_length() const;
  std::vector<int> lengths() const;
};

/// Ground-truth variance values. Pitch and energy are per phoneme or per
/// frame depending on the configured granularity. In inference only
/// `durations` is consulted (duration override); the other fields may be empty.
struct VarianceTargets {
  std::vector<std::vector<int>> durations;
  std::vector<std::vector<double>> pitch;
  std::vector<std::vector<double>> energy;
  /// Ground-truth mel frame counts; checked against the duration sums in train mode.
  std::vector<int> mel_frames;
};

struct EncodedText {
  nn::Var hidden;  // [B, P, d_model], padded rows zero
  std::vector<int> lengths;
};

struct VarianceOutputs {
  nn::Var log_durations;  // [B, P]
  nn::Var pitch;          // [B, P] or [B, F]
  nn::Var energy;         // [B, P] or [B, F]
  /// Integer durations actually used for expansion.
  std::vector<std::vector<int>> durations;
  /// Frames per item, the sum of `durations`.
  std::vector<int> frames;
};

/// Decoder conditioning that stays fixed across diffusion steps.
struct Conditioning {
  nn::Var sequence;  // [B, F, d_model]
  std::vector<int> frames;
  nn::Var speaker;  // [B, speaker_dim]
  VarianceOutputs variances;
};

struct RegulatedSequence {
  nn::Var frames;  // [B, F_max, C]
  std::vector<int> lengths;
};

/// Repeats row i of each item durations[b][i] times. Rejects negative
/// durations, a length mismatch, and items whose durations sum to zero.
RegulatedSequence length_regulate(const nn::Var& hidden, const std::vector<std::vector<int>>& durations);

/// Round-half-up of exp(log_duration), clamped below at `min_duration`.
int duration_from_log(double log_duration, int min_duration);

/// [B, max(lengths)] with ones on valid positions.
nn::Tensor sequence_mask(const std::vector<int>& lengths, int max_length);

/// G(x_t, y, s, t): text encoder, variance adaptor and diffusion decoder
/// predicting the clean mel from a noised one.
class Generator {
 public:
  /// Lookup-mode speakers; parameters are drawn from `rng`.
  Generator(const config::ModelConfig& cfg, int n_mels, std::vector<std::string> speaker_ids, Rng& rng);
  /// Precomputed speaker embeddings [S, speaker_dim].
  Generator(const config::ModelConfig& cfg, int n_mels, std::vector<std::string> speaker_ids,
            const nn::Tensor& speaker_embeddings, Rng& rng);

  const nn::ParameterSet& params() const { return params_; }
  nn::ParameterSet& params() { return params_; }
  const SpeakerStore& speakers() const { return speakers_; }
  const config::ModelConfig& config() const { return cfg_; }
  int n_mels() const { return n_mels_; }

  EncodedText encode_text(const TextBatch& text) const;

  /// Variance adaptor. Train mode requires full targets and expands with the
  /// ground-truth durations; infer mode uses predictions unless
  /// `targets->durations` overrides them.
  Conditioning adapt(const EncodedText& encoded, const std::vector<int>& speakers, Mode mode,
                     const VarianceTargets* targets) const;

  /// x_t [B, F, n_mels] to x0_pred of the same shape; padded frames are zero.
  nn::Var diffusion_decode(const nn::Var& x_t, const Conditioning& cond, const std::vector<int>& t) const;

  struct Output {
    nn::Var x0_pred;
    Conditioning cond;
  };
  /// Full pass. In train mode the expanded length must equal x_t's frame
  /// count for every item (DataError otherwise).
  Output forward(const nn::Var& x_t, const TextBatch& text, const std::vector<int>& t, Mode mode,
                 const VarianceTargets* targets) const;

  Conditioning condition(const TextBatch& text, Mode mode, const VarianceTargets* targets) const;

 private:
  struct AttentionLayer {
    nn::Linear q, k, v, out;
    nn::LayerNorm norm1;
    nn::Conv1d ffn1, ffn2;
    nn::LayerNorm norm2;
  };
  struct VariancePredictor {
    nn::Conv1d conv1;
    nn::LayerNorm norm1;
    nn::Conv1d conv2;
    nn::LayerNorm norm2;
    nn::Linear out;
  };
  struct ResidualBlock {
    nn::Linear time;
    nn::Conv1d conv;
    nn::Linear cond;
    nn::Linear speaker;
    nn::Linear out;
  };

  void build(Rng& rng);
  VariancePredictor make_predictor(const std::string& name, int kernel, Rng& rng);
  nn::Var run_predictor(const VariancePredictor& p, const nn::Var& x, const nn::Tensor& mask) const;
  nn::Var attention(const AttentionLayer& layer, const nn::Var& x, const std::vector<int>& lengths) const;

  config::ModelConfig cfg_;
  int n_mels_;
  nn::ParameterSet params_;
  SpeakerStore speakers_;

  nn::Var phoneme_table_;
  std::vector<AttentionLayer> encoder_;
  nn::Linear speaker_to_hidden_;
  VariancePredictor duration_, pitch_, energy_;
  nn::Linear pitch_embed_, energy_embed_;

  nn::Linear input_proj_;
  nn::Linear time_mlp1_, time_mlp2_;
  std::vector<ResidualBlock> blocks_;
  nn::Linear skip_proj_, output_proj_;
};

}  // namespace specdiff::model
