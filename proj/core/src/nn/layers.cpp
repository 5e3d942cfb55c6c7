#include "specdiff/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace specdiff::nn {

Var ParameterSet::create(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  if (find(name)) throw std::logic_error("duplicate parameter name " + name);
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  for (auto& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  Var p = Var::parameter(std::move(t));
  entries_.emplace_back(name, p);
  return p;
}

Var ParameterSet::create_filled(const std::string& name, Shape shape, double value) {
  if (find(name)) throw std::logic_error("duplicate parameter name " + name);
  Var p = Var::parameter(Tensor(std::move(shape), value));
  entries_.emplace_back(name, p);
  return p;
}

std::vector<Var> ParameterSet::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& [name, v] : entries_) out.push_back(v);
  return out;
}

Var ParameterSet::find(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  return Var();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& [name, v] : entries_) v.node()->requires_grad = on;
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, v] : entries_) {
    if (!v.has_grad()) continue;
    for (double g : v.grad().data) s += g * g;
  }
  return std::sqrt(s);
}

std::vector<Tensor> ParameterSet::values() const {
  std::vector<Tensor> out;
  for (const auto& [name, v] : entries_) out.push_back(v.value());
  return out;
}

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng)
    : w(ps.create(name + ".w", {in, out}, in, rng)), b(ps.create(name + ".b", {out}, in, rng)) {}

Conv1d::Conv1d(ParameterSet& ps, const std::string& name, int in, int out, int kernel_size, Rng& rng)
    : w(ps.create(name + ".w", {kernel_size * in, out}, kernel_size * in, rng)),
      b(ps.create(name + ".b", {out}, kernel_size * in, rng)),
      kernel(kernel_size),
      pad((kernel_size - 1) / 2) {
  if (kernel_size % 2 == 0) throw std::invalid_argument("Conv1d " + name + ": kernel must be odd");
}

Conv2d::Conv2d(ParameterSet& ps, const std::string& name, int in, int out, const Conv2dGeometry& g, Rng& rng)
    : w(ps.create(name + ".w", {g.kernel_h * g.kernel_w * in, out}, g.kernel_h * g.kernel_w * in, rng)),
      b(ps.create(name + ".b", {out}, g.kernel_h * g.kernel_w * in, rng)),
      geometry(g) {}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, int channels)
    : gamma(ps.create_filled(name + ".gamma", {channels}, 1.0)),
      beta(ps.create_filled(name + ".beta", {channels}, 0.0)) {}

Tensor sinusoidal_table(int count, int dim, int offset) {
  Tensor t({count, dim});
  const int half = dim / 2;
  for (int i = 0; i < count; ++i) {
    const double pos = i + offset;
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(half - 1, 1));
      t[static_cast<std::size_t>(i) * dim + k] = std::sin(pos * freq);
      t[static_cast<std::size_t>(i) * dim + half + k] = std::cos(pos * freq);
    }
  }
  return t;
}

Tensor sinusoidal_encode(const std::vector<int>& positions, int dim) {
  Tensor out({static_cast<int>(positions.size()), dim});
  for (std::size_t b = 0; b < positions.size(); ++b) {
    Tensor row = sinusoidal_table(1, dim, positions[b]);
    std::copy(row.data.begin(), row.data.end(), out.data.begin() + b * dim);
  }
  return out;
}

}  // namespace specdiff::nn
