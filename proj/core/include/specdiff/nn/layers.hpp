#pragma once

#include <string>
#include <utility>
#include <vector>

#include "specdiff/nn/ops.hpp"
#include "specdiff/rng.hpp"

namespace specdiff::nn {

/// Ordered, named collection of trainable tensors. Names are module paths
/// ("decoder.block3.conv.w") and key the checkpoint format.
class ParameterSet {
 public:
  /// New parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Var create(const std::string& name, Shape shape, int fan_in, Rng& rng);
  Var create_filled(const std::string& name, Shape shape, double value);

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;
  /// Null handle when absent.
  Var find(const std::string& name) const;
  std::size_t scalar_count() const;

  void zero_grad();
  /// Freezes (false) or unfreezes every parameter; frozen parameters pass
  /// gradients through but never accumulate their own.
  void set_requires_grad(bool on);
  /// L2 norm over every parameter gradient (zero when none is set).
  double grad_norm() const;
  /// Snapshot of all values, used for bit-identity checks.
  std::vector<Tensor> values() const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

struct Linear {
  Var w;
  Var b;
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const { return linear(x, w, b); }
};

/// Same-padded 1-D convolution over [B, T, C].
struct Conv1d {
  Var w;
  Var b;
  int kernel = 1;
  int pad = 0;
  Conv1d() = default;
  Conv1d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, Rng& rng);
  Var operator()(const Var& x) const { return conv1d(x, w, b, kernel, pad); }
};

struct Conv2d {
  Var w;
  Var b;
  Conv2dGeometry geometry;
  Conv2d() = default;
  Conv2d(ParameterSet& ps, const std::string& name, int in, int out, const Conv2dGeometry& g, Rng& rng);
  Var operator()(const Var& x) const { return conv2d(x, w, b, geometry); }
};

struct LayerNorm {
  Var gamma;
  Var beta;
  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& name, int channels);
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

/// Sinusoidal encoding of integer positions, [count, dim]; row i encodes
/// position offset + i.
Tensor sinusoidal_table(int count, int dim, int offset = 0);
/// Encodes one integer per batch element, [B, dim].
Tensor sinusoidal_encode(const std::vector<int>& positions, int dim);

}  // namespace specdiff::nn
