#pragma once

#include <functional>
#include <string>
#include <vector>

#include "specdiff/nn/autograd.hpp"
#include "specdiff/rng.hpp"

namespace specdiff::diffusion {

/// Named noise schedule. Text forms: "vp:<beta_min>:<beta_max>" for the
/// variance-preserving family and "explicit:<b1>,<b2>,..." for a fixed list.
struct ScheduleSpec {
  enum class Kind { kVariancePreserving, kExplicit };
  Kind kind = Kind::kVariancePreserving;
  double beta_min = 0.1;
  double beta_max = 40.0;
  std::vector<double> betas;

  static ScheduleSpec parse(const std::string& text);
  static ScheduleSpec explicit_betas(std::vector<double> betas);
  std::string to_string() const;
};

/// Per-step coefficient table. Vectors are indexed by t - 1 for t = 1..T;
/// use the accessors for 1-based access (alpha_bar(0) is defined as 1).
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> posterior_mean_c0;
  std::vector<double> posterior_mean_ct;
  std::vector<double> posterior_var;

  double beta(int t) const { return betas.at(t - 1); }
  double alpha(int t) const { return alphas.at(t - 1); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
  double c0(int t) const { return posterior_mean_c0.at(t - 1); }
  double ct(int t) const { return posterior_mean_ct.at(t - 1); }
  double sigma2(int t) const { return posterior_var.at(t - 1); }

  /// Plain-text table with columns t, beta, alpha, alpha_bar, posterior variance.
  std::string table() const;
};

std::vector<double> variance_preserving_betas(int steps, double beta_min, double beta_max);

/// Throws ConfigError for steps < 1, a beta outside (0, 1) or a list whose
/// length differs from `steps`.
DiffusionSchedule build_schedule(int steps, const ScheduleSpec& spec);

/// One forward transition: sqrt(1 - beta_t) x_prev + sqrt(beta_t) noise.
nn::Tensor q_step(const nn::Tensor& x_prev, int t, const DiffusionSchedule& s, const nn::Tensor& noise);

struct NoisedSample {
  nn::Tensor x_t;
  int t = 0;
  nn::Tensor epsilon;
};

/// Closed-form marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
NoisedSample q_sample(const nn::Tensor& x0, int t, const DiffusionSchedule& s, const nn::Tensor& noise);

/// Batched variants: axis 0 is the batch and example b uses step t[b].
/// q_sample_batch accepts t[b] = 0, which returns x0 unchanged.
nn::Tensor q_step_batch(const nn::Tensor& x_prev, const std::vector<int>& t, const DiffusionSchedule& s,
                        const nn::Tensor& noise);
nn::Tensor q_sample_batch(const nn::Tensor& x0, const std::vector<int>& t, const DiffusionSchedule& s,
                          const nn::Tensor& noise);

/// One reverse step through the posterior q(x_{t-1} | x_t, x0_pred):
/// c0_t x0_pred + ct_t x_t + sqrt(sigma2_t) noise.
nn::Tensor posterior_sample(const nn::Tensor& x_t, const nn::Tensor& x0_pred, int t, const DiffusionSchedule& s,
                            const nn::Tensor& noise);
/// Differentiable batched form; gradients flow into x_t and x0_pred.
nn::Var posterior_sample(const nn::Var& x_t, const nn::Var& x0_pred, const std::vector<int>& t,
                         const DiffusionSchedule& s, const nn::Tensor& noise);

/// Maps (x_t, t) to a prediction of the clean sample with the same shape.
using DenoiseFn = std::function<nn::Var(const nn::Var& x_t, int t)>;
/// Supplies the Gaussian noise used by the transition out of step t.
using NoiseFn = std::function<nn::Tensor(int t, const nn::Shape& shape)>;

NoiseFn gaussian_noise(Rng& rng);
nn::Tensor standard_normal(const nn::Shape& shape, Rng& rng);

/// Runs the T-step reverse chain from x_T and returns [x_T, x_{T-1}, ..., x_0].
/// Throws NumericalError naming the step if a value becomes non-finite.
std::vector<nn::Var> reverse_rollout(const nn::Var& x_T, const DiffusionSchedule& s, const DenoiseFn& generator,
                                     const NoiseFn& noise);
std::vector<nn::Var> reverse_rollout(const nn::Var& x_T, const DiffusionSchedule& s, const DenoiseFn& generator,
                                     Rng& rng);

}  // namespace specdiff::diffusion
