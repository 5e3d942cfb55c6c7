#include "specdiff/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace specdiff::nn {

Adam::Adam(const ParameterSet& params, AdamConfig config)
    : params_(params.vars()), config_(config), lr_(config.learning_rate) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k];
    Tensor& value = p.mutable_value();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has ? p.grad()[i] : 0.0;
      m_[k][i] = config_.beta1 * m_[k][i] + (1.0 - config_.beta1) * g;
      v_[k][i] = config_.beta2 * v_[k][i] + (1.0 - config_.beta2) * g * g;
      value[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + config_.eps);
    }
  }
  lr_ *= config_.decay;
}

std::vector<Tensor> Adam::state() const {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back(m_[k]);
    out.push_back(v_[k]);
  }
  return out;
}

void Adam::load_state(long steps, double lr, const std::vector<Tensor>& state) {
  if (state.size() != 2 * params_.size()) throw std::invalid_argument("optimizer state size mismatch");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (state[2 * k].shape != params_[k].shape() || state[2 * k + 1].shape != params_[k].shape()) {
      throw std::invalid_argument("optimizer state shape mismatch");
    }
    m_[k] = state[2 * k];
    v_[k] = state[2 * k + 1];
  }
  steps_ = steps;
  lr_ = lr;
}

}  // namespace specdiff::nn
