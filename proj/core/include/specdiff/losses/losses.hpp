#pragma once

#include <string>
#include <vector>

#include "specdiff/model/generator.hpp"
#include "specdiff/nn/ops.hpp"

namespace specdiff::losses {

/// Guards the feature-matching weight division.
inline constexpr double kFmEpsilon = 1e-8;

/// LSGAN discriminator loss: mean (D_real - 1)^2 + mean D_fake^2.
nn::Var loss_diff_d(const nn::Var& real_score, const nn::Var& fake_score);
nn::Var loss_spec_d(const nn::Var& real_score, const nn::Var& fake_score);

/// alpha * l_diff + (1 - alpha) * l_spec. Throws ConfigError for alpha outside [0, 1].
/// A null l_spec (no spectrogram discriminator) returns l_diff unchanged.
nn::Var loss_d_total(const nn::Var& l_diff, const nn::Var& l_spec, double alpha);

/// mean (D_d(fake) - 1)^2 + mean (D_s(fake) - 1)^2. A null spectrogram
/// score drops its term (ablations without D_s).
nn::Var loss_adv_g(const nn::Var& fake_pair_score, const nn::Var& fake_spec_score);

/// alpha * sum_i mean|D_d^i(fake) - D_d^i(real)| + (1 - alpha) * sum_i mean|...D_s...|.
/// Real features are detached. Empty spectrogram lists leave the diffusion sum unweighted.
nn::Var loss_fm(const std::vector<nn::Var>& real_d, const std::vector<nn::Var>& fake_d,
                const std::vector<nn::Var>& real_s, const std::vector<nn::Var>& fake_s, double alpha);

struct ReconLoss {
  nn::Var total;
  double duration = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
  double mel = 0.0;
};

/// Masked MSE on log-duration (target log(max(d, 1))), pitch and energy plus
/// masked MAE between x0_pred and x0_true [B, F, C]. `variance_lengths` are
/// the valid lengths of the pitch/energy rows (phonemes or frames);
/// `mel_frames` the valid frames of each mel.
ReconLoss loss_recon(const model::VarianceOutputs& pred, const model::VarianceTargets& targets,
                     const std::vector<int>& phoneme_lengths, const std::vector<int>& variance_lengths,
                     const nn::Var& x0_pred, const nn::Tensor& x0_true, const std::vector<int>& mel_frames);

struct GeneratorTotal {
  nn::Var l_g;
  double lambda_fm = 0.0;
};

/// lambda_fm = l_recon / max(l_fm, eps) as a constant; l_g = l_adv + l_recon + lambda_fm * l_fm.
GeneratorTotal loss_g_total(const nn::Var& l_adv, const nn::Var& l_recon, const nn::Var& l_fm);

struct LossReport {
  long step = 0;
  double l_diff = 0.0;
  double l_spec = 0.0;
  double l_d = 0.0;
  double l_adv = 0.0;
  double l_recon = 0.0;
  double l_fm = 0.0;
  double lambda_fm = 0.0;
  double l_g = 0.0;
  double alpha = 0.5;
  std::vector<int> t_sampled;
  double recon_duration = 0.0;
  double recon_pitch = 0.0;
  double recon_energy = 0.0;
  double recon_mel = 0.0;
  double grad_norm_g = 0.0;
  double grad_norm_dd = 0.0;
  double grad_norm_ds = 0.0;
  double wall_seconds = 0.0;

  /// One key=value line for the training log.
  std::string to_log_line() const;
  bool all_finite() const;
};

}  // namespace specdiff::losses
