#include "specdiff/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "specdiff/error.hpp"

namespace specdiff::losses {

using nn::Tensor;
using nn::Var;

namespace {

void check_scores(const Var& s, const char* what) {
  if (!s) throw DataError(std::string(what) + ": missing score");
  if (!s.value().all_finite()) throw NumericalError(std::string(what) + ": non-finite discriminator score");
}

Var squared_distance_mean(const Var& s, double target) { return nn::mean_all(nn::square(nn::add_scalar(s, -target))); }

Var lsgan_d(const Var& real, const Var& fake, const char* what) {
  check_scores(real, what);
  check_scores(fake, what);
  return nn::add(squared_distance_mean(real, 1.0), squared_distance_mean(fake, 0.0));
}

Var feature_l1(const std::vector<Var>& real, const std::vector<Var>& fake, const char* what) {
  if (real.size() != fake.size()) {
    throw DataError(std::string(what) + ": " + std::to_string(real.size()) + " real vs " +
                    std::to_string(fake.size()) + " fake feature maps");
  }
  Var sum;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].shape() != fake[i].shape()) {
      throw DataError(std::string(what) + ": feature " + std::to_string(i) + " shape " +
                      nn::shape_string(real[i].shape()) + " vs " + nn::shape_string(fake[i].shape()));
    }
    Var term = nn::mean_all(nn::abs(nn::sub(fake[i], nn::detach(real[i]))));
    sum = sum ? nn::add(sum, term) : term;
  }
  return sum ? sum : Var::constant(Tensor({1}, 0.0));
}

// Sum over valid positions divided by their count; `mask` matches the
// leading [B, L] axes of `x`.
Var masked_mean(const Var& x, const Tensor& mask, int inner) {
  double count = 0.0;
  for (double m : mask.data) count += m;
  count *= inner;
  if (count == 0.0) throw DataError("masked mean over zero valid positions");
  return nn::scale(nn::sum_all(nn::mul_mask(x, mask)), 1.0 / count);
}

Tensor padded(const std::vector<std::vector<double>>& v, int batch, int length) {
  Tensor t({batch, length});
  for (int b = 0; b < batch && b < static_cast<int>(v.size()); ++b) {
    const int n = std::min<int>(length, v[b].size());
    std::copy_n(v[b].begin(), n, t.data.begin() + b * length);
  }
  return t;
}

}  // namespace

Var loss_diff_d(const Var& real_score, const Var& fake_score) { return lsgan_d(real_score, fake_score, "loss_diff_d"); }

Var loss_spec_d(const Var& real_score, const Var& fake_score) { return lsgan_d(real_score, fake_score, "loss_spec_d"); }

Var loss_d_total(const Var& l_diff, const Var& l_spec, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha = " + std::to_string(alpha) + " is outside [0, 1]");
  if (!l_spec) return l_diff;
  return nn::add(nn::scale(l_diff, alpha), nn::scale(l_spec, 1.0 - alpha));
}

Var loss_adv_g(const Var& fake_pair_score, const Var& fake_spec_score) {
  check_scores(fake_pair_score, "loss_adv_g");
  Var l = squared_distance_mean(fake_pair_score, 1.0);
  if (fake_spec_score) {
    check_scores(fake_spec_score, "loss_adv_g");
    l = nn::add(l, squared_distance_mean(fake_spec_score, 1.0));
  }
  return l;
}

Var loss_fm(const std::vector<Var>& real_d, const std::vector<Var>& fake_d, const std::vector<Var>& real_s,
            const std::vector<Var>& fake_s, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha = " + std::to_string(alpha) + " is outside [0, 1]");
  Var d = feature_l1(real_d, fake_d, "loss_fm (diffusion)");
  if (real_s.empty() && fake_s.empty()) return d;
  return nn::add(nn::scale(d, alpha), nn::scale(feature_l1(real_s, fake_s, "loss_fm (spectrogram)"), 1.0 - alpha));
}

ReconLoss loss_recon(const model::VarianceOutputs& pred, const model::VarianceTargets& targets,
                     const std::vector<int>& phoneme_lengths, const std::vector<int>& variance_lengths,
                     const Var& x0_pred, const Tensor& x0_true, const std::vector<int>& mel_frames) {
  if (x0_pred.shape() != x0_true.shape) {
    throw DataError("loss_recon: mel shapes " + nn::shape_string(x0_pred.shape()) + " vs " +
                    nn::shape_string(x0_true.shape));
  }
  const int batch = x0_pred.dim(0);
  const int p = pred.log_durations.dim(1);
  const int v = pred.pitch.dim(1);
  if (targets.durations.size() != static_cast<std::size_t>(batch)) throw DataError("loss_recon: durations per item");

  Tensor log_d({batch, p});
  for (int b = 0; b < batch; ++b) {
    if (static_cast<int>(targets.durations[b].size()) != phoneme_lengths[b]) {
      throw DataError("loss_recon: duration target length mismatch for item " + std::to_string(b));
    }
    for (int i = 0; i < phoneme_lengths[b]; ++i)
      log_d[b * p + i] = std::log(static_cast<double>(std::max(targets.durations[b][i], 1)));
  }
  const Tensor pmask = model::sequence_mask(phoneme_lengths, p);
  const Tensor vmask = model::sequence_mask(variance_lengths, v);
  const Tensor fmask = model::sequence_mask(mel_frames, x0_pred.dim(1));

  ReconLoss r;
  Var ld = masked_mean(nn::square(nn::sub(pred.log_durations, Var::constant(log_d))), pmask, 1);
  Var lp = masked_mean(nn::square(nn::sub(pred.pitch, Var::constant(padded(targets.pitch, batch, v)))), vmask, 1);
  Var le = masked_mean(nn::square(nn::sub(pred.energy, Var::constant(padded(targets.energy, batch, v)))), vmask, 1);
  Var lm = masked_mean(nn::abs(nn::sub(x0_pred, Var::constant(x0_true))), fmask, x0_pred.dim(2));
  r.duration = ld.item();
  r.pitch = lp.item();
  r.energy = le.item();
  r.mel = lm.item();
  r.total = nn::add(nn::add(ld, lp), nn::add(le, lm));
  return r;
}

GeneratorTotal loss_g_total(const Var& l_adv, const Var& l_recon, const Var& l_fm) {
  GeneratorTotal out;
  const double fm = l_fm.item();
  if (fm < 0.0) throw DataError("loss_g_total: negative feature-matching loss");
  out.lambda_fm = l_recon.item() / std::max(fm, kFmEpsilon);
  out.l_g = nn::add(nn::add(l_adv, l_recon), nn::scale(l_fm, out.lambda_fm));
  return out;
}

std::string LossReport::to_log_line() const {
  std::ostringstream os;
  os.precision(9);
  os << "step=" << step << " l_diff=" << l_diff << " l_spec=" << l_spec << " l_d=" << l_d << " l_adv=" << l_adv
     << " l_recon=" << l_recon << " l_fm=" << l_fm << " lambda_fm=" << lambda_fm << " l_g=" << l_g
     << " alpha=" << alpha << " t=";
  for (std::size_t i = 0; i < t_sampled.size(); ++i) os << (i ? "," : "") << t_sampled[i];
  os << " recon_duration=" << recon_duration << " recon_pitch=" << recon_pitch << " recon_energy=" << recon_energy
     << " recon_mel=" << recon_mel << " grad_norm_g=" << grad_norm_g << " grad_norm_dd=" << grad_norm_dd
     << " grad_norm_ds=" << grad_norm_ds << " wall_s=" << wall_seconds;
  return os.str();
}

bool LossReport::all_finite() const {
  for (double v : {l_diff, l_spec, l_d, l_adv, l_recon, l_fm, lambda_fm, l_g, grad_norm_g, grad_norm_dd, grad_norm_ds})
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace specdiff::losses
