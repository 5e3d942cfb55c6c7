#include "specdiff/diffusion/schedule.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "specdiff/error.hpp"

namespace specdiff::diffusion {
namespace {

void check_shapes(const nn::Tensor& a, const nn::Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    throw DataError(std::string(what) + ": shape mismatch " + nn::shape_string(a.shape) + " vs " +
                    nn::shape_string(b.shape));
  }
}

void check_step(int t, const DiffusionSchedule& s, int lowest = 1) {
  if (t < lowest || t > s.steps) {
    throw DataError("diffusion step " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " +
                    std::to_string(s.steps) + "]");
  }
}

double parse_double(const std::string& text, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("schedule spec '" + context + "': cannot parse number '" + text + "'");
  }
}

// Scales every example of a [B, ...] tensor by its own coefficient.
nn::Tensor batch_affine(const nn::Tensor& a, const std::vector<double>& ca, const nn::Tensor& b,
                        const std::vector<double>& cb) {
  const int batch = a.dim(0);
  const std::size_t inner = a.size() / batch;
  nn::Tensor out(a.shape);
  for (int i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < inner; ++j) out[i * inner + j] = ca[i] * a[i * inner + j] + cb[i] * b[i * inner + j];
  return out;
}

}  // namespace

ScheduleSpec ScheduleSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  ScheduleSpec spec;
  if (kind == "vp") {
    const auto c2 = rest.find(':');
    if (c2 == std::string::npos) throw ConfigError("schedule spec '" + text + "': expected vp:<beta_min>:<beta_max>");
    spec.kind = Kind::kVariancePreserving;
    spec.beta_min = parse_double(rest.substr(0, c2), text);
    spec.beta_max = parse_double(rest.substr(c2 + 1), text);
    return spec;
  }
  if (kind == "explicit") {
    spec.kind = Kind::kExplicit;
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) spec.betas.push_back(parse_double(item, text));
    if (spec.betas.empty()) throw ConfigError("schedule spec '" + text + "': empty beta list");
    return spec;
  }
  throw ConfigError("schedule spec '" + text + "': unknown family '" + kind + "' (expected vp or explicit)");
}

ScheduleSpec ScheduleSpec::explicit_betas(std::vector<double> betas) {
  ScheduleSpec spec;
  spec.kind = Kind::kExplicit;
  spec.betas = std::move(betas);
  return spec;
}

std::string ScheduleSpec::to_string() const {
  std::ostringstream os;
  os << std::setprecision(17);
  if (kind == Kind::kVariancePreserving) {
    os << "vp:" << beta_min << ':' << beta_max;
  } else {
    os << "explicit:";
    for (std::size_t i = 0; i < betas.size(); ++i) os << (i ? "," : "") << betas[i];
  }
  return os.str();
}

std::vector<double> variance_preserving_betas(int steps, double beta_min, double beta_max) {
  std::vector<double> betas(steps);
  const double T = steps;
  for (int t = 1; t <= steps; ++t) {
    betas[t - 1] = 1.0 - std::exp(-beta_min / T - 0.5 * (beta_max - beta_min) * (2.0 * t - 1.0) / (T * T));
  }
  return betas;
}

DiffusionSchedule build_schedule(int steps, const ScheduleSpec& spec) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1, got " + std::to_string(steps));
  DiffusionSchedule s;
  s.steps = steps;
  if (spec.kind == ScheduleSpec::Kind::kVariancePreserving) {
    s.betas = variance_preserving_betas(steps, spec.beta_min, spec.beta_max);
  } else {
    if (static_cast<int>(spec.betas.size()) != steps) {
      throw ConfigError("explicit schedule has " + std::to_string(spec.betas.size()) + " betas for " +
                        std::to_string(steps) + " steps");
    }
    s.betas = spec.betas;
  }
  for (int t = 1; t <= steps; ++t) {
    const double b = s.betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("beta_" + std::to_string(t) + " = " + std::to_string(b) + " is outside (0, 1)");
    }
  }
  double abar = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double b = s.betas[t - 1];
    const double prev = abar;
    const double a = 1.0 - b;
    abar = prev * a;
    s.alphas.push_back(a);
    s.alpha_bars.push_back(abar);
    s.posterior_mean_c0.push_back(std::sqrt(prev) * b / (1.0 - abar));
    s.posterior_mean_ct.push_back(std::sqrt(a) * (1.0 - prev) / (1.0 - abar));
    s.posterior_var.push_back((1.0 - prev) * b / (1.0 - abar));
  }
  return s;
}

std::string DiffusionSchedule::table() const {
  std::ostringstream os;
  os << std::left << std::setw(4) << "t" << std::setw(16) << "beta" << std::setw(16) << "alpha" << std::setw(16)
     << "alpha_bar" << "posterior_var\n";
  os << std::setprecision(9) << std::fixed;
  for (int t = 1; t <= steps; ++t) {
    os << std::setw(4) << t << std::setw(16) << beta(t) << std::setw(16) << alpha(t) << std::setw(16) << alpha_bar(t)
       << sigma2(t) << '\n';
  }
  return os.str();
}

nn::Tensor q_step(const nn::Tensor& x_prev, int t, const DiffusionSchedule& s, const nn::Tensor& noise) {
  check_shapes(x_prev, noise, "q_step");
  check_step(t, s);
  const double a = std::sqrt(1.0 - s.beta(t));
  const double b = std::sqrt(s.beta(t));
  nn::Tensor out(x_prev.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * noise[i];
  return out;
}

NoisedSample q_sample(const nn::Tensor& x0, int t, const DiffusionSchedule& s, const nn::Tensor& noise) {
  check_shapes(x0, noise, "q_sample");
  check_step(t, s);
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  NoisedSample out{nn::Tensor(x0.shape), t, noise};
  for (std::size_t i = 0; i < x0.size(); ++i) out.x_t[i] = a * x0[i] + b * noise[i];
  return out;
}

nn::Tensor q_step_batch(const nn::Tensor& x_prev, const std::vector<int>& t, const DiffusionSchedule& s,
                        const nn::Tensor& noise) {
  check_shapes(x_prev, noise, "q_step");
  if (x_prev.rank() < 1 || x_prev.dim(0) != static_cast<int>(t.size())) throw DataError("q_step: t per example");
  std::vector<double> ca, cb;
  for (int ti : t) {
    check_step(ti, s);
    ca.push_back(std::sqrt(1.0 - s.beta(ti)));
    cb.push_back(std::sqrt(s.beta(ti)));
  }
  return batch_affine(x_prev, ca, noise, cb);
}

nn::Tensor q_sample_batch(const nn::Tensor& x0, const std::vector<int>& t, const DiffusionSchedule& s,
                          const nn::Tensor& noise) {
  check_shapes(x0, noise, "q_sample");
  if (x0.rank() < 1 || x0.dim(0) != static_cast<int>(t.size())) throw DataError("q_sample: t per example");
  std::vector<double> ca, cb;
  for (int ti : t) {
    check_step(ti, s, 0);
    ca.push_back(std::sqrt(s.alpha_bar(ti)));
    cb.push_back(std::sqrt(1.0 - s.alpha_bar(ti)));
  }
  return batch_affine(x0, ca, noise, cb);
}

nn::Tensor posterior_sample(const nn::Tensor& x_t, const nn::Tensor& x0_pred, int t, const DiffusionSchedule& s,
                            const nn::Tensor& noise) {
  check_shapes(x_t, x0_pred, "posterior_sample");
  check_shapes(x_t, noise, "posterior_sample");
  check_step(t, s);
  const double c0 = s.c0(t), ct = s.ct(t), sd = std::sqrt(s.sigma2(t));
  nn::Tensor out(x_t.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_pred[i] + ct * x_t[i] + sd * noise[i];
  return out;
}

nn::Var posterior_sample(const nn::Var& x_t, const nn::Var& x0_pred, const std::vector<int>& t,
                         const DiffusionSchedule& s, const nn::Tensor& noise) {
  check_shapes(x_t.value(), x0_pred.value(), "posterior_sample");
  check_shapes(x_t.value(), noise, "posterior_sample");
  const int batch = x_t.dim(0);
  if (batch != static_cast<int>(t.size())) throw DataError("posterior_sample: t per example");
  std::vector<double> c0, ct, sd;
  for (int ti : t) {
    check_step(ti, s);
    c0.push_back(s.c0(ti));
    ct.push_back(s.ct(ti));
    sd.push_back(std::sqrt(s.sigma2(ti)));
  }
  const std::size_t inner = x_t.size() / batch;
  nn::Tensor out(x_t.shape());
  for (int b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t i = b * inner + j;
      out[i] = c0[b] * x0_pred.value()[i] + ct[b] * x_t.value()[i] + sd[b] * noise[i];
    }
  return nn::make_result(std::move(out), {x_t, x0_pred}, [c0, ct, batch, inner](nn::Node& self) {
    const std::vector<double>* coeff[2] = {&ct, &c0};
    for (int k = 0; k < 2; ++k) {
      nn::Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      nn::Tensor& g = in.grad_buffer();
      for (int b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < inner; ++j) g[b * inner + j] += (*coeff[k])[b] * self.grad[b * inner + j];
    }
  });
}

nn::Tensor standard_normal(const nn::Shape& shape, Rng& rng) {
  nn::Tensor t(shape);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

NoiseFn gaussian_noise(Rng& rng) {
  return [&rng](int, const nn::Shape& shape) { return standard_normal(shape, rng); };
}

std::vector<nn::Var> reverse_rollout(const nn::Var& x_T, const DiffusionSchedule& s, const DenoiseFn& generator,
                                     const NoiseFn& noise) {
  std::vector<nn::Var> trajectory{x_T};
  nn::Var x = x_T;
  const int batch = x_T.value().rank() > 0 ? x_T.dim(0) : 1;
  for (int t = s.steps; t >= 1; --t) {
    nn::Var x0_pred = generator(x, t);
    if (x0_pred.shape() != x.shape()) {
      throw DataError("generator returned shape " + nn::shape_string(x0_pred.shape()) + " at step " +
                      std::to_string(t) + ", expected " + nn::shape_string(x.shape()));
    }
    if (!x0_pred.value().all_finite()) {
      throw NumericalError("non-finite x0 prediction at reverse step t=" + std::to_string(t));
    }
    x = posterior_sample(x, x0_pred, std::vector<int>(batch, t), s, noise(t, x.shape()));
    if (!x.value().all_finite()) {
      throw NumericalError("non-finite sample after reverse step t=" + std::to_string(t));
    }
    trajectory.push_back(x);
  }
  return trajectory;
}

std::vector<nn::Var> reverse_rollout(const nn::Var& x_T, const DiffusionSchedule& s, const DenoiseFn& generator,
                                     Rng& rng) {
  return reverse_rollout(x_T, s, generator, gaussian_noise(rng));
}

}  // namespace specdiff::diffusion
