#pragma once

#include <vector>

#include "specdiff/nn/layers.hpp"

namespace specdiff::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  /// Multiplicative learning-rate decay applied after every step (1 = constant).
  double decay = 1.0;
};

/// Adaptive moment estimation over one ParameterSet.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);

  /// Applies one update from the current gradients. Parameters whose
  /// gradient is unset are treated as having zero gradient.
  void step();

  long steps() const { return steps_; }
  double current_learning_rate() const { return lr_; }

  /// Moment buffers in parameter order (m then v for each parameter).
  std::vector<Tensor> state() const;
  void load_state(long steps, double lr, const std::vector<Tensor>& state);

 private:
  std::vector<Var> params_;
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long steps_ = 0;
  double lr_;
};

}  // namespace specdiff::nn
