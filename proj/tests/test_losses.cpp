#include <gtest/gtest.h>

#include <cmath>

#include "specdiff/error.hpp"
#include "specdiff/losses/losses.hpp"

using namespace specdiff;
using namespace specdiff::losses;
using nn::Tensor;
using nn::Var;

namespace {

Var scores(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Var::constant(Tensor({n}, std::move(v)));
}
Var scalar(double v) { return Var::constant(Tensor({1}, {v})); }
Var filled(nn::Shape s, double v) { return Var::constant(Tensor(std::move(s), v)); }

// Perfect variance predictions for one item with durations d and padding to p.
struct ReconCase {
  model::VarianceOutputs pred;
  model::VarianceTargets targets;
  std::vector<int> phoneme_lengths;
};

ReconCase perfect_case(const std::vector<int>& d, int p) {
  ReconCase c;
  const int n = static_cast<int>(d.size());
  Tensor logd({1, p}), pitch({1, p}), energy({1, p});
  std::vector<double> pt, et;
  for (int i = 0; i < n; ++i) {
    logd[i] = std::log(std::max(d[i], 1));
    pt.push_back(0.1 * i - 0.3);
    et.push_back(0.5 - 0.2 * i);
    pitch[i] = pt.back();
    energy[i] = et.back();
  }
  for (int i = n; i < p; ++i) {
    logd[i] = 7.0;
    pitch[i] = -4.0;
    energy[i] = 9.0;
  }
  c.pred.log_durations = Var::constant(logd);
  c.pred.pitch = Var::constant(pitch);
  c.pred.energy = Var::constant(energy);
  c.targets.durations = {d};
  c.targets.pitch = {pt};
  c.targets.energy = {et};
  c.phoneme_lengths = {n};
  return c;
}

}  // namespace

TEST(DiscriminatorLoss, LabeledOptimaAndHandValues) {
  EXPECT_EQ(loss_diff_d(scalar(1.0), scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(loss_diff_d(scalar(0.5), scalar(0.5)).item(), 0.5, 1e-12);
  EXPECT_NEAR(loss_diff_d(scalar(0.0), scalar(1.0)).item(), 2.0, 1e-12);

  EXPECT_EQ(loss_spec_d(scalar(1.0), scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(loss_spec_d(scalar(0.9), scalar(0.2)).item(), 0.05, 1e-12);
  EXPECT_NEAR(loss_spec_d(scores({1.0, 0.0}), scores({0.0, 1.0})).item(), 1.0, 1e-12);
}

TEST(DiscriminatorLoss, Mixing) {
  EXPECT_NEAR(loss_d_total(scalar(0.4), scalar(0.2), 0.5).item(), 0.3, 1e-12);
  EXPECT_EQ(loss_d_total(scalar(0.4), scalar(0.2), 1.0).item(), 0.4);
  EXPECT_EQ(loss_d_total(scalar(0.4), scalar(0.2), 0.0).item(), 0.2);
  EXPECT_EQ(loss_d_total(scalar(0.4), Var(), 0.5).item(), 0.4);
  EXPECT_THROW(loss_d_total(scalar(0.4), scalar(0.2), 1.5), ConfigError);
  EXPECT_THROW(loss_d_total(scalar(0.4), scalar(0.2), -0.1), ConfigError);
}

TEST(GeneratorLoss, Adversarial) {
  EXPECT_EQ(loss_adv_g(scalar(1.0), scalar(1.0)).item(), 0.0);
  EXPECT_NEAR(loss_adv_g(scalar(0.0), scalar(0.0)).item(), 2.0, 1e-12);
  EXPECT_NEAR(loss_adv_g(scalar(0.5), scalar(1.0)).item(), 0.25, 1e-12);
  EXPECT_NEAR(loss_adv_g(scalar(0.5), Var()).item(), 0.25, 1e-12);
}

TEST(GeneratorLoss, FeatureMatching) {
  const std::vector<Var> real = {filled({1, 4, 4, 2}, 0.3), filled({1, 2, 2, 4}, -1.0)};
  EXPECT_EQ(loss_fm(real, real, real, real, 0.5).item(), 0.0);

  const std::vector<Var> one_real = {filled({2, 3, 3, 2}, 0.25)};
  const std::vector<Var> one_fake = {filled({2, 3, 3, 2}, 1.25)};
  EXPECT_NEAR(loss_fm(one_real, one_fake, {}, {}, 1.0).item(), 1.0, 1e-12);

  const std::vector<Var> s_real = {filled({1, 2, 2, 1}, 0.0)};
  const std::vector<Var> s_fake = {filled({1, 2, 2, 1}, 3.0)};
  EXPECT_NEAR(loss_fm(one_real, one_fake, s_real, s_fake, 0.0).item(), 3.0, 1e-12);
  EXPECT_NEAR(loss_fm(one_real, one_fake, s_real, s_fake, 0.5).item(), 2.0, 1e-12);
}

TEST(GeneratorLoss, FeatureMatchingDetachesReal) {
  Var real = Var::parameter(Tensor({1, 2, 2, 1}, 0.0));
  Var fake = Var::parameter(Tensor({1, 2, 2, 1}, 1.0));
  nn::backward(loss_fm({real}, {fake}, {}, {}, 1.0));
  EXPECT_FALSE(real.has_grad() && real.grad().max_abs() > 0.0);
  ASSERT_TRUE(fake.has_grad());
  EXPECT_NEAR(fake.grad()[0], 0.25, 1e-12);
}

TEST(GeneratorLoss, Total) {
  auto t = loss_g_total(scalar(0.0), scalar(2.0), scalar(0.5));
  EXPECT_NEAR(t.lambda_fm, 4.0, 1e-12);
  EXPECT_NEAR(t.l_g.item(), 4.0, 1e-12);

  t = loss_g_total(scalar(0.3), scalar(1.2), scalar(0.4));
  EXPECT_NEAR(t.l_g.item(), 2.7, 1e-12);

  t = loss_g_total(scalar(0.3), scalar(1.2), scalar(0.0));
  EXPECT_TRUE(std::isfinite(t.lambda_fm));
  EXPECT_NEAR(t.lambda_fm, 1.2 / kFmEpsilon, 1e-3);
  EXPECT_NEAR(t.l_g.item(), 1.5, 1e-12);

  t = loss_g_total(scalar(0.0), scalar(0.7), scalar(0.7));
  EXPECT_NEAR(t.lambda_fm, 1.0, 1e-12);
}

TEST(GeneratorLoss, LambdaIsConstantInBackward) {
  Var recon = Var::parameter(Tensor({1}, {2.0}));
  Var fm = Var::parameter(Tensor({1}, {0.5}));
  nn::backward(loss_g_total(scalar(0.0), recon, fm).l_g);
  EXPECT_NEAR(recon.grad()[0], 1.0, 1e-12);
  EXPECT_NEAR(fm.grad()[0], 4.0, 1e-12);
}

TEST(ReconstructionLoss, PerfectIsZero) {
  auto c = perfect_case({2, 3, 1}, 3);
  const Tensor mel({1, 6, 4}, 0.7);
  const auto r = loss_recon(c.pred, c.targets, c.phoneme_lengths, {3}, Var::constant(mel), mel, {6});
  EXPECT_EQ(r.total.item(), 0.0);
}

TEST(ReconstructionLoss, MelOffsetByOne) {
  auto c = perfect_case({2, 3, 1}, 3);
  const Tensor mel({1, 6, 4}, 0.7);
  const auto r = loss_recon(c.pred, c.targets, c.phoneme_lengths, {3}, Var::constant(Tensor({1, 6, 4}, 1.7)), mel, {6});
  EXPECT_NEAR(r.mel, 1.0, 1e-12);
  EXPECT_NEAR(r.total.item(), 1.0, 1e-12);
  EXPECT_EQ(r.duration, 0.0);
  EXPECT_EQ(r.pitch, 0.0);
  EXPECT_EQ(r.energy, 0.0);
}

TEST(ReconstructionLoss, ZeroDurationTargetUsesFloor) {
  auto c = perfect_case({2, 0, 1}, 3);
  const Tensor mel({1, 3, 2}, 0.0);
  const auto r = loss_recon(c.pred, c.targets, c.phoneme_lengths, {3}, Var::constant(mel), mel, {3});
  EXPECT_EQ(r.duration, 0.0);
}

TEST(ReconstructionLoss, PaddingIsIgnored) {
  const auto base = perfect_case({2, 3, 1}, 3);
  Tensor pred_mel({1, 6, 4}, 0.0), true_mel({1, 6, 4}, 0.0);
  for (std::size_t i = 0; i < pred_mel.size(); ++i) {
    pred_mel[i] = 0.01 * static_cast<double>(i);
    true_mel[i] = -0.02 * static_cast<double>(i % 7);
  }
  auto shifted = base;
  shifted.pred.pitch = Var::constant(Tensor({1, 3}, {0.0, 0.4, -0.1}));
  const auto ref = loss_recon(shifted.pred, shifted.targets, {3}, {3}, Var::constant(pred_mel), true_mel, {6});

  // same item padded to 5 phonemes and 9 frames with junk in the padding
  auto padded = perfect_case({2, 3, 1}, 5);
  Tensor pitch = padded.pred.pitch.value();
  pitch[0] = 0.0;
  pitch[1] = 0.4;
  pitch[2] = -0.1;
  padded.pred.pitch = Var::constant(pitch);
  Tensor pm({1, 9, 4}, 5.0), tm({1, 9, 4}, -3.0);
  std::copy(pred_mel.data.begin(), pred_mel.data.end(), pm.data.begin());
  std::copy(true_mel.data.begin(), true_mel.data.end(), tm.data.begin());
  const auto pad = loss_recon(padded.pred, padded.targets, {3}, {3}, Var::constant(pm), tm, {6});
  EXPECT_NEAR(pad.total.item(), ref.total.item(), 1e-12);
  EXPECT_NEAR(pad.pitch, ref.pitch, 1e-12);
  EXPECT_NEAR(pad.mel, ref.mel, 1e-12);
}

TEST(LossReport, LogLineAndFiniteness) {
  LossReport r;
  r.step = 12;
  r.l_d = 0.5;
  r.t_sampled = {1, 4};
  const std::string line = r.to_log_line();
  EXPECT_NE(line.find("step=12"), std::string::npos);
  EXPECT_TRUE(r.all_finite());
  r.l_g = std::nan("");
  EXPECT_FALSE(r.all_finite());
}
