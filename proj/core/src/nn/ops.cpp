#include "specdiff/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace specdiff::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

int last_dim(const Var& x) {
  if (x.value().rank() == 0) throw std::invalid_argument("op needs rank >= 1");
  return x.value().shape.back();
}

// Accumulates into an input's gradient only when that input participates.
template <typename F>
void if_grad(Node& self, std::size_t i, F&& f) {
  Node& in = *self.inputs[i];
  if (in.requires_grad) f(in.grad_buffer());
}

template <typename Fwd, typename Bwd>
Var unary(const Var& x, Fwd fwd, Bwd dydx) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(std::move(out), {x}, [dydx](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx(xv[i], self.value[i]);
    });
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if_grad(self, k, [&](Tensor& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    if_grad(self, 1, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    });
    if_grad(self, 1, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    });
  });
}

Var scale(const Var& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
  });
}

Var add_scalar(const Var& x, double value) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + value;
  return make_result(std::move(out), {x}, [](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Var add_lastdim(const Var& x, const Var& v) {
  const int c = last_dim(x);
  if (v.shape() != Shape{c}) throw std::invalid_argument("add_lastdim: vector shape " + shape_string(v.shape()));
  Tensor out(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] + v.value()[j];
  return make_result(std::move(out), {x, v}, [c, rows](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    if_grad(self, 1, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    });
  });
}

Var mul_lastdim(const Var& x, const Var& v) {
  const int c = last_dim(x);
  if (v.shape() != Shape{c}) throw std::invalid_argument("mul_lastdim: vector shape " + shape_string(v.shape()));
  Tensor out(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] * v.value()[j];
  return make_result(std::move(out), {x, v}, [c, rows](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& vv = self.inputs[1]->value;
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[r * c + j] += self.grad[r * c + j] * vv[j];
    });
    if_grad(self, 1, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j] * xv[r * c + j];
    });
  });
}

Var add_per_batch(const Var& x, const Var& v) {
  const int b = x.dim(0);
  const int c = last_dim(x);
  if (v.shape() != Shape{b, c}) {
    throw std::invalid_argument("add_per_batch: " + shape_string(x.shape()) + " with " + shape_string(v.shape()));
  }
  const std::size_t inner = x.size() / (static_cast<std::size_t>(b) * c);
  Tensor out(x.shape());
  for (int bi = 0; bi < b; ++bi)
    for (std::size_t r = 0; r < inner; ++r)
      for (int j = 0; j < c; ++j) {
        const std::size_t idx = (bi * inner + r) * c + j;
        out[idx] = x.value()[idx] + v.value()[bi * c + j];
      }
  return make_result(std::move(out), {x, v}, [b, c, inner](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    if_grad(self, 1, [&](Tensor& g) {
      for (int bi = 0; bi < b; ++bi)
        for (std::size_t r = 0; r < inner; ++r)
          for (int j = 0; j < c; ++j) g[bi * c + j] += self.grad[(bi * inner + r) * c + j];
    });
  });
}

Var mul_mask(const Var& x, const Tensor& mask) {
  if (mask.rank() != 2 || x.value().rank() < 2 || mask.shape[0] != x.dim(0) || mask.shape[1] != x.dim(1)) {
    throw std::invalid_argument("mul_mask: mask " + shape_string(mask.shape) + " for " + shape_string(x.shape()));
  }
  const std::size_t rows = mask.size();
  const std::size_t inner = x.size() / rows;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < inner; ++j) out[r * inner + j] = x.value()[r * inner + j] * mask[r];
  return make_result(std::move(out), {x}, [mask, rows, inner](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < inner; ++j) g[r * inner + j] += self.grad[r * inner + j] * mask[r];
    });
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var matmul(const Var& x, const Var& w) {
  const int k = last_dim(x);
  if (w.value().rank() != 2 || w.dim(0) != k) {
    throw std::invalid_argument("matmul: " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  }
  const int m = w.dim(1);
  const int rows = static_cast<int>(x.size() / k);
  Shape out_shape = x.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  MatMap(out.ptr(), rows, m).noalias() = ConstMatMap(x.value().ptr(), rows, k) * ConstMatMap(w.value().ptr(), k, m);
  return make_result(std::move(out), {x, w}, [rows, k, m](Node& self) {
    ConstMatMap dy(self.grad.ptr(), rows, m);
    if_grad(self, 0, [&](Tensor& g) {
      MatMap(g.ptr(), rows, k).noalias() += dy * ConstMatMap(self.inputs[1]->value.ptr(), k, m).transpose();
    });
    if_grad(self, 1, [&](Tensor& g) {
      MatMap(g.ptr(), k, m).noalias() += ConstMatMap(self.inputs[0]->value.ptr(), rows, k).transpose() * dy;
    });
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const int k = last_dim(x);
  if (w.value().rank() != 2 || w.dim(0) != k || b.shape() != Shape{w.dim(1)}) {
    throw std::invalid_argument("linear: " + shape_string(x.shape()) + " x " + shape_string(w.shape()) + " + " +
                                shape_string(b.shape()));
  }
  const int m = w.dim(1);
  const int rows = static_cast<int>(x.size() / k);
  Shape out_shape = x.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  MatMap y(out.ptr(), rows, m);
  y.noalias() = ConstMatMap(x.value().ptr(), rows, k) * ConstMatMap(w.value().ptr(), k, m);
  y.rowwise() += ConstVecMap(b.value().ptr(), m);
  return make_result(std::move(out), {x, w, b}, [rows, k, m](Node& self) {
    ConstMatMap dy(self.grad.ptr(), rows, m);
    if_grad(self, 0, [&](Tensor& g) {
      MatMap(g.ptr(), rows, k).noalias() += dy * ConstMatMap(self.inputs[1]->value.ptr(), k, m).transpose();
    });
    if_grad(self, 1, [&](Tensor& g) {
      MatMap(g.ptr(), k, m).noalias() += ConstMatMap(self.inputs[0]->value.ptr(), rows, k).transpose() * dy;
    });
    if_grad(self, 2, [&](Tensor& g) { VecMap(g.ptr(), m) += dy.colwise().sum(); });
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const int groups = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) {
    throw std::invalid_argument("bmm: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  Tensor out({groups, m, n});
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    so = static_cast<std::size_t>(m) * n;
  for (int g = 0; g < groups; ++g) {
    ConstMatMap av(a.value().ptr() + g * sa, m, k);
    MatMap ov(out.ptr() + g * so, m, n);
    if (transpose_b) {
      ov.noalias() = av * ConstMatMap(b.value().ptr() + g * sb, n, k).transpose();
    } else {
      ov.noalias() = av * ConstMatMap(b.value().ptr() + g * sb, k, n);
    }
  }
  return make_result(std::move(out), {a, b}, [=](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    for (int g = 0; g < groups; ++g) {
      ConstMatMap dy(self.grad.ptr() + g * so, m, n);
      if_grad(self, 0, [&](Tensor& ga) {
        MatMap da(ga.ptr() + g * sa, m, k);
        if (transpose_b) {
          da.noalias() += dy * ConstMatMap(bv.ptr() + g * sb, n, k);
        } else {
          da.noalias() += dy * ConstMatMap(bv.ptr() + g * sb, k, n).transpose();
        }
      });
      if_grad(self, 1, [&](Tensor& gb) {
        ConstMatMap am(av.ptr() + g * sa, m, k);
        if (transpose_b) {
          MatMap(gb.ptr() + g * sb, n, k).noalias() += dy.transpose() * am;
        } else {
          MatMap(gb.ptr() + g * sb, k, n).noalias() += am.transpose() * dy;
        }
      });
    }
  });
}

Var conv1d(const Var& x, const Var& w, const Var& b, int kernel, int pad) {
  if (x.value().rank() != 3) throw std::invalid_argument("conv1d: input must be [B, T, C], got " + shape_string(x.shape()));
  const int batch = x.dim(0), steps = x.dim(1), cin = x.dim(2);
  if (w.value().rank() != 2 || w.dim(0) != kernel * cin || b.shape() != Shape{w.dim(1)}) {
    throw std::invalid_argument("conv1d: weight " + shape_string(w.shape()) + " does not fit input " +
                                shape_string(x.shape()) + " with kernel " + std::to_string(kernel));
  }
  const int cout = w.dim(1);
  const int tout = steps + 2 * pad - kernel + 1;
  if (tout < 1) throw std::invalid_argument("conv1d: sequence too short for kernel");
  const int rows = batch * tout;
  const int kc = kernel * cin;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * kc, 0.0);
  const double* xp = x.value().ptr();
  for (int bi = 0; bi < batch; ++bi)
    for (int t = 0; t < tout; ++t) {
      double* row = cols->data() + static_cast<std::size_t>(bi * tout + t) * kc;
      for (int kk = 0; kk < kernel; ++kk) {
        const int src = t + kk - pad;
        if (src < 0 || src >= steps) continue;
        std::copy_n(xp + static_cast<std::size_t>(bi * steps + src) * cin, cin, row + kk * cin);
      }
    }

  Tensor out({batch, tout, cout});
  MatMap y(out.ptr(), rows, cout);
  y.noalias() = ConstMatMap(cols->data(), rows, kc) * ConstMatMap(w.value().ptr(), kc, cout);
  y.rowwise() += ConstVecMap(b.value().ptr(), cout);

  return make_result(std::move(out), {x, w, b}, [=](Node& self) {
    ConstMatMap dy(self.grad.ptr(), rows, cout);
    if_grad(self, 1, [&](Tensor& g) {
      MatMap(g.ptr(), kc, cout).noalias() += ConstMatMap(cols->data(), rows, kc).transpose() * dy;
    });
    if_grad(self, 2, [&](Tensor& g) { VecMap(g.ptr(), cout) += dy.colwise().sum(); });
    if_grad(self, 0, [&](Tensor& g) {
      RowMat dcols = dy * ConstMatMap(self.inputs[1]->value.ptr(), kc, cout).transpose();
      for (int bi = 0; bi < batch; ++bi)
        for (int t = 0; t < tout; ++t) {
          const double* row = dcols.data() + static_cast<std::size_t>(bi * tout + t) * kc;
          for (int kk = 0; kk < kernel; ++kk) {
            const int src = t + kk - pad;
            if (src < 0 || src >= steps) continue;
            double* dst = g.ptr() + static_cast<std::size_t>(bi * steps + src) * cin;
            for (int c = 0; c < cin; ++c) dst[c] += row[kk * cin + c];
          }
        }
    });
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, const Conv2dGeometry& geo) {
  if (x.value().rank() != 4) throw std::invalid_argument("conv2d: input must be [B, H, W, C], got " + shape_string(x.shape()));
  const int batch = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const int kc = geo.kernel_h * geo.kernel_w * cin;
  if (w.value().rank() != 2 || w.dim(0) != kc || b.shape() != Shape{w.dim(1)}) {
    throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) + " does not fit input " +
                                shape_string(x.shape()));
  }
  const int cout = w.dim(1);
  const int ho = (h + 2 * geo.pad_h - geo.kernel_h) / geo.stride_h + 1;
  const int wo = (wd + 2 * geo.pad_w - geo.kernel_w) / geo.stride_w + 1;
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: input " + shape_string(x.shape()) + " too small");
  const int rows = batch * ho * wo;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * kc, 0.0);
  const double* xp = x.value().ptr();
  for (int bi = 0; bi < batch; ++bi)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double* row = cols->data() + static_cast<std::size_t>((bi * ho + i) * wo + j) * kc;
        for (int ki = 0; ki < geo.kernel_h; ++ki) {
          const int si = i * geo.stride_h + ki - geo.pad_h;
          if (si < 0 || si >= h) continue;
          for (int kj = 0; kj < geo.kernel_w; ++kj) {
            const int sj = j * geo.stride_w + kj - geo.pad_w;
            if (sj < 0 || sj >= wd) continue;
            std::copy_n(xp + (static_cast<std::size_t>(bi * h + si) * wd + sj) * cin, cin,
                        row + (ki * geo.kernel_w + kj) * cin);
          }
        }
      }

  Tensor out({batch, ho, wo, cout});
  MatMap y(out.ptr(), rows, cout);
  y.noalias() = ConstMatMap(cols->data(), rows, kc) * ConstMatMap(w.value().ptr(), kc, cout);
  y.rowwise() += ConstVecMap(b.value().ptr(), cout);

  return make_result(std::move(out), {x, w, b}, [=](Node& self) {
    ConstMatMap dy(self.grad.ptr(), rows, cout);
    if_grad(self, 1, [&](Tensor& g) {
      MatMap(g.ptr(), kc, cout).noalias() += ConstMatMap(cols->data(), rows, kc).transpose() * dy;
    });
    if_grad(self, 2, [&](Tensor& g) { VecMap(g.ptr(), cout) += dy.colwise().sum(); });
    if_grad(self, 0, [&](Tensor& g) {
      RowMat dcols = dy * ConstMatMap(self.inputs[1]->value.ptr(), kc, cout).transpose();
      for (int bi = 0; bi < batch; ++bi)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            const double* row = dcols.data() + static_cast<std::size_t>((bi * ho + i) * wo + j) * kc;
            for (int ki = 0; ki < geo.kernel_h; ++ki) {
              const int si = i * geo.stride_h + ki - geo.pad_h;
              if (si < 0 || si >= h) continue;
              for (int kj = 0; kj < geo.kernel_w; ++kj) {
                const int sj = j * geo.stride_w + kj - geo.pad_w;
                if (sj < 0 || sj >= wd) continue;
                double* dst = g.ptr() + (static_cast<std::size_t>(bi * h + si) * wd + sj) * cin;
                const double* src = row + (ki * geo.kernel_w + kj) * cin;
                for (int c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
    });
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int c = last_dim(x);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw std::invalid_argument("layer_norm: affine shape");
  const std::size_t rows = x.size() / c;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += xr[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < c; ++j) {
      const double xh = (xr[j] - mean) * is;
      (*xhat)[r * c + j] = xh;
      out[r * c + j] = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
    const Tensor& gv = self.inputs[1]->value;
    if_grad(self, 1, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j] * (*xhat)[r * c + j];
    });
    if_grad(self, 2, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    });
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (int j = 0; j < c; ++j) {
          const double d = self.grad[r * c + j] * gv[j];
          sum_d += d;
          sum_dx += d * (*xhat)[r * c + j];
        }
        for (int j = 0; j < c; ++j) {
          const double d = self.grad[r * c + j] * gv[j];
          g[r * c + j] += (*inv_std)[r] / c * (c * d - sum_d - (*xhat)[r * c + j] * sum_dx);
        }
      }
    });
  });
}

Var masked_softmax(const Var& scores, const std::vector<int>& key_lengths, int heads) {
  if (scores.value().rank() != 3) throw std::invalid_argument("masked_softmax: scores must be rank 3");
  const int groups = scores.dim(0), tq = scores.dim(1), tk = scores.dim(2);
  if (heads < 1 || groups != static_cast<int>(key_lengths.size()) * heads) {
    throw std::invalid_argument("masked_softmax: key_lengths do not match score groups");
  }
  Tensor out(scores.shape(), 0.0);
  for (int g = 0; g < groups; ++g) {
    const int len = std::clamp(key_lengths[g / heads], 0, tk);
    for (int i = 0; i < tq; ++i) {
      const double* s = scores.value().ptr() + (static_cast<std::size_t>(g) * tq + i) * tk;
      double* p = out.ptr() + (static_cast<std::size_t>(g) * tq + i) * tk;
      if (len == 0) continue;
      const double mx = *std::max_element(s, s + len);
      double z = 0.0;
      for (int j = 0; j < len; ++j) z += (p[j] = std::exp(s[j] - mx));
      for (int j = 0; j < len; ++j) p[j] /= z;
    }
  }
  return make_result(std::move(out), {scores}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      const std::size_t n_rows = static_cast<std::size_t>(groups) * tq;
      for (std::size_t r = 0; r < n_rows; ++r) {
        const double* p = self.value.ptr() + r * tk;
        const double* dy = self.grad.ptr() + r * tk;
        double dot = 0.0;
        for (int j = 0; j < tk; ++j) dot += dy[j] * p[j];
        for (int j = 0; j < tk; ++j) g[r * tk + j] += p[j] * (dy[j] - dot);
      }
    });
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), x.value().data);
  return make_result(std::move(out), {x}, [](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Var permute(const Var& x, const std::vector<int>& order) {
  const int r = x.value().rank();
  if (static_cast<int>(order.size()) != r) throw std::invalid_argument("permute: order rank mismatch");
  std::vector<std::size_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  Shape out_shape(r);
  std::vector<std::size_t> strides(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[order[i]];
    strides[i] = in_strides[order[i]];
  }
  // Source offset for every output element, in output order.
  auto offsets = std::make_shared<std::vector<std::size_t>>(x.size());
  std::vector<int> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < x.size(); ++o) {
    (*offsets)[o] = src;
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[a] < out_shape[a]) {
        src += strides[a];
        break;
      }
      src -= strides[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = x.value()[(*offsets)[o]];
  return make_result(std::move(out), {x}, [offsets](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t o = 0; o < offsets->size(); ++o) g[(*offsets)[o]] += self.grad[o];
    });
  });
}

Var concat_lastdim(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_lastdim: no inputs");
  Shape base = xs[0].shape();
  std::vector<int> widths;
  int total = 0;
  for (const auto& v : xs) {
    Shape s = v.shape();
    if (s.size() != base.size() || !std::equal(s.begin(), s.end() - 1, base.begin())) {
      throw std::invalid_argument("concat_lastdim: leading shapes differ");
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = xs[0].size() / base.back();
  base.back() = total;
  Tensor out(base);
  int offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(xs[k].value().ptr() + r * widths[k], widths[k], out.ptr() + r * total + offset);
    offset += widths[k];
  }
  return make_result(std::move(out), xs, [widths, rows, total](Node& self) {
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if_grad(self, k, [&](Tensor& g) {
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += self.grad[r * total + off + j];
      });
      off += widths[k];
    }
  });
}

Var slice_lastdim(const Var& x, int start, int length) {
  const int c = last_dim(x);
  if (start < 0 || length < 1 || start + length > c) throw std::invalid_argument("slice_lastdim: range");
  Shape s = x.shape();
  s.back() = length;
  const std::size_t rows = x.size() / c;
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.value().ptr() + r * c + start, length, out.ptr() + r * length);
  return make_result(std::move(out), {x}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < length; ++j) g[r * c + start + j] += self.grad[r * length + j];
    });
  });
}

Var concat_batch(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_batch: no inputs");
  Shape s = xs[0].shape();
  int total = 0;
  for (const auto& v : xs) {
    if (v.value().rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), v.shape().begin() + 1)) {
      throw std::invalid_argument("concat_batch: trailing shapes differ");
    }
    total += v.dim(0);
  }
  s[0] = total;
  Tensor out(s);
  std::vector<std::size_t> sizes;
  std::size_t off = 0;
  for (const auto& v : xs) {
    std::copy(v.value().data.begin(), v.value().data.end(), out.data.begin() + off);
    off += v.size();
    sizes.push_back(v.size());
  }
  return make_result(std::move(out), xs, [sizes](Node& self) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if_grad(self, k, [&](Tensor& g) {
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[o + i];
      });
      o += sizes[k];
    }
  });
}

Var slice_batch(const Var& x, int start, int count) {
  const int b = x.dim(0);
  if (start < 0 || count < 1 || start + count > b) throw std::invalid_argument("slice_batch: range");
  const std::size_t inner = x.size() / b;
  Shape s = x.shape();
  s[0] = count;
  Tensor out(s);
  std::copy_n(x.value().ptr() + start * inner, count * inner, out.ptr());
  return make_result(std::move(out), {x}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < count * inner; ++i) g[start * inner + i] += self.grad[i];
    });
  });
}

Var gather_rows(const Var& x, const std::vector<std::vector<int>>& index, int out_len) {
  if (x.value().rank() != 3 || x.dim(0) != static_cast<int>(index.size())) {
    throw std::invalid_argument("gather_rows: input " + shape_string(x.shape()) + " vs index batch");
  }
  const int batch = x.dim(0), rows_in = x.dim(1), c = x.dim(2);
  Tensor out({batch, out_len, c}, 0.0);
  for (int bi = 0; bi < batch; ++bi) {
    const int n = std::min<int>(out_len, static_cast<int>(index[bi].size()));
    for (int f = 0; f < n; ++f) {
      const int src = index[bi][f];
      if (src < 0) continue;
      if (src >= rows_in) throw std::out_of_range("gather_rows: index past input rows");
      std::copy_n(x.value().ptr() + (static_cast<std::size_t>(bi) * rows_in + src) * c, c,
                  out.ptr() + (static_cast<std::size_t>(bi) * out_len + f) * c);
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (int bi = 0; bi < batch; ++bi) {
        const int n = std::min<int>(out_len, static_cast<int>(index[bi].size()));
        for (int f = 0; f < n; ++f) {
          const int src = index[bi][f];
          if (src < 0) continue;
          double* dst = g.ptr() + (static_cast<std::size_t>(bi) * rows_in + src) * c;
          const double* dy = self.grad.ptr() + (static_cast<std::size_t>(bi) * out_len + f) * c;
          for (int j = 0; j < c; ++j) dst[j] += dy[j];
        }
      }
    });
  });
}

Var embedding(const Var& table, const std::vector<std::vector<int>>& ids, int out_len) {
  if (table.value().rank() != 2) throw std::invalid_argument("embedding: table must be [V, D]");
  const int vocab = table.dim(0), d = table.dim(1);
  const int batch = static_cast<int>(ids.size());
  Tensor out({batch, out_len, d}, 0.0);
  for (int bi = 0; bi < batch; ++bi) {
    if (static_cast<int>(ids[bi].size()) > out_len) throw std::invalid_argument("embedding: sequence longer than out_len");
    for (std::size_t p = 0; p < ids[bi].size(); ++p) {
      const int id = ids[bi][p];
      if (id < 0 || id >= vocab) throw std::out_of_range("embedding: id " + std::to_string(id) + " outside vocabulary");
      std::copy_n(table.value().ptr() + static_cast<std::size_t>(id) * d, d,
                  out.ptr() + (static_cast<std::size_t>(bi) * out_len + p) * d);
    }
  }
  return make_result(std::move(out), {table}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (int bi = 0; bi < batch; ++bi)
        for (std::size_t p = 0; p < ids[bi].size(); ++p) {
          double* dst = g.ptr() + static_cast<std::size_t>(ids[bi][p]) * d;
          const double* dy = self.grad.ptr() + (static_cast<std::size_t>(bi) * out_len + p) * d;
          for (int j = 0; j < d; ++j) dst[j] += dy[j];
        }
    });
  });
}

Var avg_pool2d(const Var& x) {
  if (x.value().rank() != 4) throw std::invalid_argument("avg_pool2d: input must be [B, H, W, C]");
  const int batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int fh = h > 1 ? 2 : 1, fw = w > 1 ? 2 : 1;
  const int ho = h / fh, wo = w / fw;
  const double inv = 1.0 / (fh * fw);
  Tensor out({batch, ho, wo, c}, 0.0);
  for (int bi = 0; bi < batch; ++bi)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double* dst = out.ptr() + ((static_cast<std::size_t>(bi) * ho + i) * wo + j) * c;
        for (int a = 0; a < fh; ++a)
          for (int bb = 0; bb < fw; ++bb) {
            const double* src = x.value().ptr() + ((static_cast<std::size_t>(bi) * h + i * fh + a) * w + j * fw + bb) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k] * inv;
          }
      }
  return make_result(std::move(out), {x}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (int bi = 0; bi < batch; ++bi)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            const double* dy = self.grad.ptr() + ((static_cast<std::size_t>(bi) * ho + i) * wo + j) * c;
            for (int a = 0; a < fh; ++a)
              for (int bb = 0; bb < fw; ++bb) {
                double* dst = g.ptr() + ((static_cast<std::size_t>(bi) * h + i * fh + a) * w + j * fw + bb) * c;
                for (int k = 0; k < c; ++k) dst[k] += dy[k] * inv;
              }
          }
    });
  });
}

Var mean_spatial(const Var& x) {
  if (x.value().rank() < 2) throw std::invalid_argument("mean_spatial: rank < 2");
  const int batch = x.dim(0), c = last_dim(x);
  const std::size_t inner = x.size() / (static_cast<std::size_t>(batch) * c);
  Tensor out({batch, c}, 0.0);
  for (int bi = 0; bi < batch; ++bi)
    for (std::size_t r = 0; r < inner; ++r)
      for (int j = 0; j < c; ++j) out[bi * c + j] += x.value()[(bi * inner + r) * c + j] / inner;
  return make_result(std::move(out), {x}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (int bi = 0; bi < batch; ++bi)
        for (std::size_t r = 0; r < inner; ++r)
          for (int j = 0; j < c; ++j) g[(bi * inner + r) * c + j] += self.grad[bi * c + j] / inner;
    });
  });
}

Var sum_all(const Var& x) {
  Tensor out({1}, std::accumulate(x.value().data.begin(), x.value().data.end(), 0.0));
  return make_result(std::move(out), {x}, [](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
  });
}

Var mean_all(const Var& x) {
  if (x.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Var minibatch_stddev(const Var& x) {
  if (x.value().rank() != 4) throw std::invalid_argument("minibatch_stddev: input must be [B, H, W, C]");
  const int batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t inner = static_cast<std::size_t>(h) * w * c;
  auto mean = std::make_shared<std::vector<double>>(inner, 0.0);
  auto sd = std::make_shared<std::vector<double>>(inner, 0.0);
  const double* xp = x.value().ptr();
  for (int bi = 0; bi < batch; ++bi)
    for (std::size_t i = 0; i < inner; ++i) (*mean)[i] += xp[bi * inner + i] / batch;
  double stat = 0.0;
  for (std::size_t i = 0; i < inner; ++i) {
    double var = 0.0;
    for (int bi = 0; bi < batch; ++bi) {
      const double d = xp[bi * inner + i] - (*mean)[i];
      var += d * d;
    }
    (*sd)[i] = std::sqrt(var / batch);
    stat += (*sd)[i];
  }
  stat /= static_cast<double>(inner);

  Tensor out({batch, h, w, c + 1});
  const std::size_t pixels = static_cast<std::size_t>(batch) * h * w;
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(xp + p * c, c, out.ptr() + p * (c + 1));
    out[p * (c + 1) + c] = stat;
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    if_grad(self, 0, [&](Tensor& g) {
      double dstat = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        const double* dy = self.grad.ptr() + p * (c + 1);
        for (int k = 0; k < c; ++k) g[p * c + k] += dy[k];
        dstat += dy[c];
      }
      const double dsd = dstat / static_cast<double>(inner);
      const double* xv = self.inputs[0]->value.ptr();
      for (std::size_t i = 0; i < inner; ++i) {
        if ((*sd)[i] <= 0.0) continue;  // subgradient zero where the batch is constant
        for (int bi = 0; bi < batch; ++bi)
          g[bi * inner + i] += dsd * (xv[bi * inner + i] - (*mean)[i]) / (batch * (*sd)[i]);
      }
    });
  });
}

Var detach(const Var& x) { return Var::constant(x.value()); }

}  // namespace specdiff::nn
