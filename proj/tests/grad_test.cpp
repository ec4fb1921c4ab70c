#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "radious/num/ops.hpp"
#include "radious/num/tape.hpp"
#include "testutil.hpp"

using radious::Error;
using radious::num::GradientTape;
using radious::num::Shape;
using radious::num::Tensor;
namespace ops = radious::num;
using testutil::max_grad_rel_err;

namespace {
constexpr double kTol = 1e-4;
}

TEST(Gradient, SumGivesOnes) {
  std::mt19937_64 rng(1);
  Tensor p = Tensor::uniform({3, 4}, rng, -2, 2).with_grad();
  Tensor loss = ops::sum(p);
  auto grads = radious::num::gradient(loss, {p});
  ASSERT_EQ(grads[0].shape(), p.shape());
  for (std::size_t i = 0; i < grads[0].size(); ++i) EXPECT_DOUBLE_EQ(grads[0][i], 1.0);
}

TEST(Gradient, QuadraticGivesTwoP) {
  std::mt19937_64 rng(2);
  Tensor p = Tensor::uniform({5}, rng, -2, 2).with_grad();
  Tensor loss = ops::sum(ops::mul(p, p));
  auto grads = radious::num::gradient(loss, {p});
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(grads[0][i], 2 * p[i], 1e-12);
}

TEST(Gradient, UnregisteredParameterFails) {
  Tensor p = Tensor::zeros({2});  // never marked with_grad
  Tensor q = Tensor::zeros({2}).with_grad();
  Tensor loss = ops::sum(q);
  EXPECT_THROW(radious::num::gradient(loss, {p}), Error);
  try {
    radious::num::gradient(loss, {p});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unregistered_parameter");
  }
}

TEST(Gradient, ReplayIsDeterministic) {
  std::mt19937_64 rng(3);
  Tensor p = Tensor::uniform({4, 4}, rng, -1, 1).with_grad();
  Tensor q = Tensor::uniform({4, 4}, rng, -1, 1).with_grad();
  Tensor loss = ops::sum(ops::softmax(ops::matmul(p, q), 1));
  auto g1 = radious::num::gradient(loss, {p, q});
  auto g2 = radious::num::gradient(loss, {p, q});
  for (int t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < g1[t].size(); ++i) EXPECT_EQ(g1[t][i], g2[t][i]);
}

TEST(Gradient, UnusedParameterGetsZeros) {
  Tensor p = Tensor::full({3}, 2.0).with_grad();
  Tensor unused = Tensor::full({2, 2}, 1.0).with_grad();
  Tensor loss = ops::sum(p);
  auto grads = radious::num::gradient(loss, {p, unused});
  ASSERT_EQ(grads[1].shape(), unused.shape());
  for (std::size_t i = 0; i < grads[1].size(); ++i) EXPECT_DOUBLE_EQ(grads[1][i], 0.0);
}

TEST(Gradient, ElementwiseOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  Tensor a = Tensor::uniform({3, 4}, rng, -1.5, 1.5);
  Tensor b = Tensor::uniform({3, 4}, rng, -1.5, 1.5);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) { return ops::sum(ops::add(p[0], p[1])); }, {a, b}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) { return ops::sum(ops::sub(p[0], p[1])); }, {a, b}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  return ops::sum(ops::mul(ops::mul(p[0], p[1]), p[0]));
                },
                {a, b}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) { return ops::mean(ops::gelu(p[0])); }, {a}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) { return ops::mean(ops::sigmoid(p[0])); }, {a}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) { return ops::sum(ops::mul_scalar(p[0], -2.5)); }, {a}),
            kTol);
}

TEST(Gradient, BiasAndLayoutOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::uniform({4, 3}, rng, -1, 1);
  Tensor bias = Tensor::uniform({3}, rng, -1, 1);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  return ops::sum(ops::mul(ops::add_bias(p[0], p[1]), ops::add_bias(p[0], p[1])));
                },
                {x, bias}),
            kTol);
  Tensor m = Tensor::uniform({2, 3, 4}, rng, -1, 1);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  Tensor tokens = ops::map_to_tokens(p[0]);
                  Tensor back = ops::tokens_to_map(tokens, 3, 4);
                  return ops::sum(ops::mul(back, back));
                },
                {m}),
            kTol);
  Tensor w = Tensor::uniform({4, 6}, rng, -1, 1);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  Tensor left = ops::slice_cols(p[0], 0, 2);
                  Tensor right = ops::slice_cols(p[0], 2, 6);
                  Tensor glued = ops::concat_cols({right, left});
                  Tensor top = ops::slice_rows(glued, 0, 2);
                  Tensor bottom = ops::slice_rows(glued, 2, 4);
                  Tensor stacked = ops::concat_rows({bottom, top});
                  return ops::sum(ops::mul(stacked, stacked));
                },
                {w}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  Tensor t = ops::transpose(p[0]);
                  return ops::sum(ops::mul(t, t));
                },
                {w}),
            kTol);
}

TEST(Gradient, MatmulSoftmaxLayerNormComposite) {
  std::mt19937_64 rng(12);
  Tensor a = Tensor::uniform({3, 4}, rng, -1, 1);
  Tensor b = Tensor::uniform({4, 5}, rng, -1, 1);
  Tensor gamma = Tensor::uniform({5}, rng, 0.5, 1.5);
  Tensor beta = Tensor::uniform({5}, rng, -0.5, 0.5);
  // Composite loss through matmul + softmax + layer_norm, checked against
  // central differences with step 1e-4 in double precision.
  auto fn = [](const std::vector<Tensor>& p) {
    Tensor h = ops::softmax(ops::matmul(p[0], p[1]), 1);
    Tensor n = ops::layer_norm(h, p[2], p[3], 1e-5);
    return ops::sum(ops::mul(n, n));
  };
  EXPECT_LT(max_grad_rel_err(fn, {a, b, gamma, beta}, 1e-4), kTol);
}

TEST(Gradient, LogSoftmaxAndMaskedSoftmaxMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  Tensor x = Tensor::uniform({4, 5}, rng, -2, 2);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  Tensor lp = ops::log_softmax(p[0], 1);
                  return ops::sum(ops::mul(lp, lp));
                },
                {x}),
            kTol);
  std::vector<std::uint8_t> mask(x.size(), 1);
  mask[1] = mask[7] = mask[12] = 0;
  EXPECT_LT(max_grad_rel_err(
                [&mask](const std::vector<Tensor>& p) {
                  Tensor y = ops::softmax_masked(p[0], mask, 1);
                  return ops::sum(ops::mul(y, y));
                },
                {x}),
            kTol);
}

TEST(Gradient, Conv2dMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  Tensor x = Tensor::uniform({2, 5, 5}, rng, -1, 1);
  Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
  Tensor bias = Tensor::uniform({3}, rng, -1, 1);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  Tensor y = ops::conv2d(p[0], p[1], &p[2], 2, 1);
                  return ops::sum(ops::mul(y, y));
                },
                {x, k, bias}),
            kTol);
}

TEST(Gradient, BilinearResizeMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  Tensor x = Tensor::uniform({2, 3, 4}, rng, -1, 1);
  EXPECT_LT(max_grad_rel_err(
                [](const std::vector<Tensor>& p) {
                  Tensor up = ops::bilinear_resize(p[0], 5, 7);
                  Tensor down = ops::bilinear_resize(up, 2, 2);
                  return ops::sum(ops::mul(down, down));
                },
                {x}),
            kTol);
}

TEST(Gradient, LossOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  Tensor logits = Tensor::uniform({4, 6}, rng, -2, 2);
  std::vector<int> targets{1, 3, 0, 5};
  std::vector<int> positions{0, 2};
  EXPECT_LT(max_grad_rel_err(
                [&](const std::vector<Tensor>& p) {
                  return ops::nll_selected(ops::log_softmax(p[0], 1), targets, positions);
                },
                {logits}),
            kTol);
  std::vector<double> weights{1.0, 0.1, 0.1, 2.0};
  EXPECT_LT(max_grad_rel_err(
                [&](const std::vector<Tensor>& p) {
                  return ops::nll_weighted(ops::log_softmax(p[0], 1), targets, weights);
                },
                {logits}),
            kTol);
  Tensor z = Tensor::uniform({3, 7}, rng, -3, 3);
  Tensor y = Tensor::uniform({3, 7}, rng, 0, 1);
  EXPECT_LT(max_grad_rel_err(
                [&y](const std::vector<Tensor>& p) { return ops::bce_with_logits_mean(p[0], y); },
                {z}),
            kTol);
  EXPECT_LT(max_grad_rel_err(
                [&y](const std::vector<Tensor>& p) { return ops::dice_loss(p[0], y); }, {z}),
            kTol);
}

TEST(GradientTape, RegistryRoundTrip) {
  GradientTape tape;
  std::mt19937_64 rng(17);
  Tensor w = tape.parameter("w", Tensor::uniform({3, 3}, rng, -1, 1));
  Tensor b = tape.parameter("b", Tensor::uniform({3}, rng, -1, 1));
  EXPECT_EQ(tape.names(), (std::vector<std::string>{"w", "b"}));
  Tensor x = Tensor::uniform({2, 3}, rng, -1, 1);
  Tensor loss = ops::sum(ops::add_bias(ops::matmul(x, w), b));
  auto grads = tape.gradients(loss);
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[0].shape(), w.shape());
  EXPECT_EQ(grads[1].shape(), b.shape());
  // Gradient of the bias under a pure sum is the number of rows.
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(grads[1][i], 2.0, 1e-12);
  EXPECT_THROW(tape.parameter("w", w), Error);
  EXPECT_THROW(tape.get("nope"), Error);
}

TEST(GradientTape, SgdStepMovesAgainstGradient) {
  GradientTape tape;
  Tensor p = tape.parameter("p", Tensor::full({2}, 3.0));
  Tensor loss = ops::sum(ops::mul(tape.get("p"), tape.get("p")));
  auto grads = tape.gradients(loss);
  radious::num::sgd_step(tape, grads, 0.25);
  Tensor next = tape.get("p");
  EXPECT_DOUBLE_EQ(next[0], 3.0 - 0.25 * 6.0);
  EXPECT_DOUBLE_EQ(next[1], 3.0 - 0.25 * 6.0);
}

TEST(NoGradGuard, SuppressesGraphConstruction) {
  Tensor p = Tensor::full({2}, 1.0).with_grad();
  radious::num::NoGradGuard guard;
  Tensor loss = ops::sum(ops::mul(p, p));
  EXPECT_FALSE(loss.requires_grad());
}
