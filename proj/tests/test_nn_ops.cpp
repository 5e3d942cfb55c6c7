#include <gtest/gtest.h>

#include <cmath>

#include "specdiff/nn/adam.hpp"
#include "specdiff/nn/layers.hpp"
#include "specdiff/nn/ops.hpp"
#include "support/gradcheck.hpp"

using namespace specdiff;
using namespace specdiff::nn;
using specdiff::testing::check_gradients;
using specdiff::testing::random_tensor;

namespace {

// Weighted sum with fixed random weights so every output element matters.
Var probe(const Var& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum_all(mul(y, Var::constant(random_tensor(y.shape(), rng))));
}

void expect_grad_ok(const std::function<Var()>& f, std::vector<Var> vars, int samples = 40) {
  Rng rng(5);
  auto res = check_gradients(f, std::move(vars), samples, rng);
  EXPECT_LT(res.worst_relative_error, 1e-6) << res.worst_label;
}

}  // namespace

TEST(Ops, ElementwiseGradients) {
  Rng rng(1);
  Var a = Var::parameter(random_tensor({2, 3, 4}, rng));
  Var b = Var::parameter(random_tensor({2, 3, 4}, rng));
  Var v = Var::parameter(random_tensor({4}, rng));
  expect_grad_ok([&] { return probe(add(mul(a, b), sub(tanh(a), sigmoid(b)))); }, {a, b});
  expect_grad_ok([&] { return probe(add(square(a), exp(scale(b, 0.3)))); }, {a, b});
  expect_grad_ok([&] { return probe(mul_lastdim(add_lastdim(a, v), v)); }, {a, v});
  expect_grad_ok([&] { return probe(leaky_relu(add_scalar(a, 0.05))); }, {a});
}

TEST(Ops, LinearAlgebraGradients) {
  Rng rng(2);
  Var x = Var::parameter(random_tensor({2, 5, 3}, rng));
  Var w = Var::parameter(random_tensor({3, 4}, rng));
  Var bias = Var::parameter(random_tensor({4}, rng));
  expect_grad_ok([&] { return probe(linear(x, w, bias)); }, {x, w, bias});
  Var p = Var::parameter(random_tensor({3, 4, 5}, rng));
  Var q = Var::parameter(random_tensor({3, 6, 5}, rng));
  Var r = Var::parameter(random_tensor({3, 5, 2}, rng));
  expect_grad_ok([&] { return probe(bmm(p, q, true)); }, {p, q});
  expect_grad_ok([&] { return probe(bmm(p, r, false)); }, {p, r});
}

TEST(Ops, ConvolutionGradients) {
  Rng rng(3);
  Var x = Var::parameter(random_tensor({2, 7, 3}, rng));
  Var w = Var::parameter(random_tensor({5 * 3, 4}, rng));
  Var b = Var::parameter(random_tensor({4}, rng));
  expect_grad_ok([&] { return probe(conv1d(x, w, b, 5, 2)); }, {x, w, b});

  Var img = Var::parameter(random_tensor({2, 5, 9, 2}, rng));
  Conv2dGeometry g{3, 9, 1, 2, 1, 4};
  Var w2 = Var::parameter(random_tensor({3 * 9 * 2, 3}, rng));
  Var b2 = Var::parameter(random_tensor({3}, rng));
  expect_grad_ok([&] { return probe(conv2d(img, w2, b2, g)); }, {img, w2, b2});
}

TEST(Ops, NormalisationAndAttentionGradients) {
  Rng rng(4);
  Var x = Var::parameter(random_tensor({2, 3, 6}, rng));
  Var g = Var::parameter(random_tensor({6}, rng));
  Var be = Var::parameter(random_tensor({6}, rng));
  expect_grad_ok([&] { return probe(layer_norm(x, g, be)); }, {x, g, be});
  Var s = Var::parameter(random_tensor({4, 3, 5}, rng));
  expect_grad_ok([&] { return probe(masked_softmax(s, {5, 3}, 2)); }, {s});
}

TEST(Ops, ShapeAndPoolingGradients) {
  Rng rng(6);
  Var x = Var::parameter(random_tensor({2, 5, 7, 3}, rng));
  expect_grad_ok([&] { return probe(avg_pool2d(x)); }, {x});
  expect_grad_ok([&] { return probe(mean_spatial(x)); }, {x});
  expect_grad_ok([&] { return probe(minibatch_stddev(x)); }, {x});
  expect_grad_ok([&] { return probe(permute(x, {0, 2, 1, 3})); }, {x});
  Var y = Var::parameter(random_tensor({2, 4, 3}, rng));
  expect_grad_ok([&] { return probe(gather_rows(y, {{0, 0, 1, 3, -1}, {2, 2, 2}}, 5)); }, {y});
  expect_grad_ok([&] { return probe(concat_lastdim({y, slice_lastdim(y, 1, 2)})); }, {y});
  expect_grad_ok([&] { return probe(concat_batch({slice_batch(y, 1, 1), y})); }, {y});
  Var table = Var::parameter(random_tensor({6, 3}, rng));
  expect_grad_ok([&] { return probe(embedding(table, {{1, 5, 1}, {2}}, 3)); }, {table});
  Tensor mask({2, 4}, std::vector<double>{1, 1, 0, 0, 1, 1, 1, 0});
  expect_grad_ok([&] { return probe(mul_mask(y, mask)); }, {y});
  Var v = Var::parameter(random_tensor({2, 3}, rng));
  expect_grad_ok([&] { return probe(add_per_batch(y, v)); }, {y, v});
  expect_grad_ok([&] { return mean_all(abs(y)); }, {y});
}

TEST(Ops, MinibatchStddevValues) {
  Var x = Var::constant(Tensor({2, 1, 1, 1}, std::vector<double>{0.0, 2.0}));
  Var y = minibatch_stddev(x);
  ASSERT_EQ(y.shape(), (Shape{2, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(y.value()[1], 1.0);
  EXPECT_DOUBLE_EQ(y.value()[3], 1.0);

  Var same = Var::constant(Tensor({3, 2, 2, 1}, 0.7));
  Var z = minibatch_stddev(same);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(z.value()[i * 2 + 1], 0.0);

  Var one = Var::constant(Tensor({1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
  Var w = minibatch_stddev(one);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(w.value()[i * 3 + 2], 0.0);
}

TEST(Ops, MinibatchStddevIsPermutationInvariant) {
  Rng rng(8);
  Tensor t = random_tensor({3, 2, 2, 2}, rng);
  Tensor swapped = t;
  std::swap_ranges(swapped.data.begin(), swapped.data.begin() + 8, swapped.data.begin() + 16);
  const double a = minibatch_stddev(Var::constant(t)).value()[2];
  const double b = minibatch_stddev(Var::constant(swapped)).value()[2];
  EXPECT_NEAR(a, b, 1e-15);
}

TEST(Ops, MaskedSoftmaxZeroesPaddedKeys) {
  Var s = Var::constant(Tensor({2, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  Var p = masked_softmax(s, {2}, 2);
  EXPECT_EQ(p.value()[2], 0.0);
  EXPECT_EQ(p.value()[5], 0.0);
  EXPECT_NEAR(p.value()[0] + p.value()[1], 1.0, 1e-15);
}

TEST(Autograd, NoGradGuardStopsRecording) {
  Var w = Var::parameter(Tensor({2}, 1.0));
  {
    NoGradGuard guard;
    Var y = scale(w, 3.0);
    EXPECT_FALSE(y.requires_grad());
  }
  Var y = scale(w, 3.0);
  EXPECT_TRUE(y.requires_grad());
  backward(sum_all(y));
  EXPECT_DOUBLE_EQ(w.grad()[0], 3.0);
}

TEST(Autograd, SharedSubgraphAccumulates) {
  Var w = Var::parameter(Tensor({1}, 2.0));
  Var y = mul(w, w);
  Var z = add(y, y);
  backward(sum_all(z));
  EXPECT_DOUBLE_EQ(w.grad()[0], 8.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  Var p = ps.create_filled("p", {3}, 1.0);
  Adam opt(ps, AdamConfig{0.1, 0.5, 0.9, 1e-12, 1.0});
  p.grad_buffer() = Tensor({3}, std::vector<double>{2.0, -3.0, 0.0});
  opt.step();
  EXPECT_NEAR(p.value()[0], 0.9, 1e-9);
  EXPECT_NEAR(p.value()[1], 1.1, 1e-9);
  EXPECT_DOUBLE_EQ(p.value()[2], 1.0);
}

TEST(Rng, StateRoundTripsAndIsDeterministic) {
  Rng a(42);
  a.normal();
  const std::string saved = a.state();
  const double next = a.normal();
  Rng b(0);
  b.set_state(saved);
  EXPECT_EQ(b.normal(), next);
  Rng c(42), d(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(c.uniform_int(1, 4), d.uniform_int(1, 4));
}
