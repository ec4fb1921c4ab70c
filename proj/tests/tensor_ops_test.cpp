#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <vector>

#include "radious/num/ops.hpp"
#include "testutil.hpp"

using radious::Error;
using radious::num::Shape;
using radious::num::Tensor;
namespace ops = radious::num;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// Independent oracle: plain triple loop, no shared code with the kernel.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < k; ++t) out[i * n + j] += a.at({i, t}) * b.at({t, j});
  return out;
}

}  // namespace

TEST(Matmul, IdentityPassThrough) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor c = ops::matmul(a, eye);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c[i], a[i]);
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor c = ops::matmul(a, b);
  EXPECT_DOUBLE_EQ(c.at({0, 0}), 19);
  EXPECT_DOUBLE_EQ(c.at({0, 1}), 22);
  EXPECT_DOUBLE_EQ(c.at({1, 0}), 43);
  EXPECT_DOUBLE_EQ(c.at({1, 1}), 50);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(42);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor c = ops::matmul(a, b);
  auto expected = matmul_oracle(a, b);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(c[i], expected[i], 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    ops::matmul(a, b);
    FAIL() << "expected dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "dimension");
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
}

TEST(Matmul, AssociativityOnRandomChains) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor c = random_tensor({5, 2}, rng);
    Tensor left = ops::matmul(ops::matmul(a, b), c);
    Tensor right = ops::matmul(a, ops::matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) EXPECT_NEAR(left[i], right[i], 1e-9);
  }
}

TEST(Softmax, SymmetricPair) {
  Tensor x = Tensor::from({2}, {0, 0});
  Tensor y = ops::softmax(x, 0);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, ShiftInvariance) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({6}, rng, -4, 4);
  Tensor y0 = ops::softmax(x, 0);
  Tensor y1 = ops::softmax(ops::add_scalar(x, 17.25), 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y0[i], y1[i], 1e-12);
}

TEST(Softmax, MatchesExpNormalizeOracle) {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  Tensor y = ops::softmax(x, 0);
  // Direct exp/sum evaluation.
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / denom, 1e-12);
  EXPECT_NEAR(y[1], std::exp(2.0) / denom, 1e-12);
  EXPECT_NEAR(y[2], std::exp(3.0) / denom, 1e-12);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5, 7}, rng, -30, 30);
    Tensor y = ops::softmax(x, 1);
    for (int r = 0; r < 5; ++r) {
      double s = 0;
      for (int c = 0; c < 7; ++c) s += y.at({r, c});
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    // Also along axis 0.
    Tensor y0 = ops::softmax(x, 0);
    for (int c = 0; c < 7; ++c) {
      double s = 0;
      for (int r = 0; r < 5; ++r) s += y0.at({r, c});
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(MaskedSoftmax, AllTrueBitwiseEqualsUnmasked) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({4, 6}, rng, -5, 5);
  std::vector<std::uint8_t> mask(x.size(), 1);
  Tensor plain = ops::softmax(x, 1);
  Tensor masked = ops::softmax_masked(x, mask, 1);
  EXPECT_EQ(0, std::memcmp(plain.data().data(), masked.data().data(), x.size() * sizeof(double)));
}

TEST(MaskedSoftmax, DisallowedPositionsAreExactlyZero) {
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({3, 8}, rng, -5, 5);
  std::vector<std::uint8_t> mask(x.size(), 0);
  std::bernoulli_distribution coin(0.6);
  for (int r = 0; r < 3; ++r) {
    bool any = false;
    for (int c = 0; c < 8; ++c) {
      mask[r * 8 + c] = coin(rng) ? 1 : 0;
      any = any || mask[r * 8 + c];
    }
    if (!any) mask[r * 8] = 1;
  }
  Tensor y = ops::softmax_masked(x, mask, 1);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 8; ++c) {
      if (!mask[r * 8 + c]) EXPECT_EQ(y.at({r, c}), 0.0);
      s += y.at({r, c});
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(LayerNorm, ConstantVectorCollapsesToZero) {
  Tensor x = Tensor::full({4}, 3.25);
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  Tensor y = ops::layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 0.0, 1e-9);
}

TEST(LayerNorm, ZeroGammaCollapsesToBeta) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor gamma = Tensor::zeros({4});
  Tensor beta = Tensor::full({4}, -0.75);
  Tensor y = ops::layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], -0.75);
}

TEST(LayerNorm, MatchesTwoPassMomentsOracle) {
  Tensor x = Tensor::from({4}, {1, 2, 3, 4});
  Tensor gamma = Tensor::from({4}, {1.5, 1.5, 1.5, 1.5});
  Tensor beta = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});
  const double eps = 1e-5;
  Tensor y = ops::layer_norm(x, gamma, beta, eps);
  // Two-pass mean/variance oracle.
  double mu = (1 + 2 + 3 + 4) / 4.0;
  double var = 0;
  for (double v : {1.0, 2.0, 3.0, 4.0}) var += (v - mu) * (v - mu);
  var /= 4.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = 1.5 * ((x[i] - mu) / std::sqrt(var + eps)) + 0.5;
    EXPECT_NEAR(y[i], expected, 1e-9);
  }
}

namespace {

// Direct summation convolution oracle.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0;
        for (int c = 0; c < cin; ++c)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
              const int iy = oy * stride + u - pad;
              const int ix = ox * stride + v - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x.at({c, iy, ix}) * k.at({o, c, u, v});
            }
        out[(o * oh + oy) * ow + ox] = acc;
      }
  return out;
}

}  // namespace

TEST(Conv2d, OneByOneIdentityKernel) {
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tensor k = Tensor::from({1, 1, 1, 1}, {1.0});
  Tensor y = ops::conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, CenteredDeltaKernelWithPadding) {
  std::mt19937_64 rng(29);
  Tensor x = random_tensor({2, 5, 5}, rng);
  std::vector<double> kv(2 * 2 * 3 * 3, 0.0);
  // Each output channel passes through its own input channel.
  kv[(0 * 2 + 0) * 9 + 4] = 1.0;
  kv[(1 * 2 + 1) * 9 + 4] = 1.0;
  Tensor k = Tensor::from({2, 2, 3, 3}, std::move(kv));
  Tensor y = ops::conv2d(x, k, 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, MatchesDirectSummationOracle) {
  std::mt19937_64 rng(31);
  Tensor x = random_tensor({2, 5, 5}, rng);
  Tensor k = random_tensor({3, 2, 3, 3}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor y = ops::conv2d(x, k, stride, pad);
      auto expected = conv_oracle(x, k, stride, pad);
      ASSERT_EQ(y.size(), expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y[i], expected[i], 1e-12);
    }
  }
}

TEST(Conv2d, KernelLargerThanPaddedInputFails) {
  Tensor x = Tensor::zeros({1, 3, 3});
  Tensor k = Tensor::zeros({1, 1, 5, 5});
  try {
    ops::conv2d(x, k, 1, 0);
    FAIL() << "expected dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "dimension");
  }
}

TEST(BilinearResize, IdentityIsBitwise) {
  std::mt19937_64 rng(37);
  Tensor x = random_tensor({3, 6, 5}, rng);
  Tensor y = ops::bilinear_resize(x, 6, 5);
  EXPECT_EQ(0, std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(double)));
}

TEST(BilinearResize, ConstantStaysConstant) {
  Tensor x = Tensor::full({2, 3, 3}, 0.62);
  Tensor y = ops::bilinear_resize(x, 6, 6);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.62);
}

TEST(BilinearResize, RampMatchesClosedFormOracle) {
  // 2x2 ramp upsampled to 4x4, align_corners = false.
  Tensor x = Tensor::from({1, 2, 2}, {0, 1, 2, 3});
  Tensor y = ops::bilinear_resize(x, 4, 4);
  auto sample = [&](int oy, int ox) {
    auto tap = [](int i, int in, int out, int* lo, int* hi, double* t) {
      double src = (i + 0.5) * (static_cast<double>(in) / out) - 0.5;
      if (src <= 0) {
        *lo = *hi = 0;
        *t = 0;
      } else if (src >= in - 1) {
        *lo = *hi = in - 1;
        *t = 0;
      } else {
        *lo = static_cast<int>(std::floor(src));
        *hi = *lo + 1;
        *t = src - *lo;
      }
    };
    int y0, y1, x0, x1;
    double ty, tx;
    tap(oy, 2, 4, &y0, &y1, &ty);
    tap(ox, 2, 4, &x0, &x1, &tx);
    auto v = [&](int yy, int xx) { return x.at({0, yy, xx}); };
    return (1 - ty) * ((1 - tx) * v(y0, x0) + tx * v(y0, x1)) +
           ty * ((1 - tx) * v(y1, x0) + tx * v(y1, x1));
  };
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox) EXPECT_NEAR(y.at({0, oy, ox}), sample(oy, ox), 1e-9);
}

TEST(Layout, TokenMapRoundTrip) {
  std::mt19937_64 rng(41);
  Tensor x = random_tensor({3, 4, 5}, rng);
  Tensor tokens = ops::map_to_tokens(x);
  ASSERT_EQ(tokens.shape(), (Shape{20, 3}));
  EXPECT_DOUBLE_EQ(tokens.at({7, 2}), x.at({2, 1, 2}));
  Tensor back = ops::tokens_to_map(tokens, 4, 5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(back[i], x[i]);
}

TEST(Slicing, ColumnAndRowViews) {
  Tensor x = Tensor::from({2, 4}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor cols = ops::slice_cols(x, 1, 3);
  EXPECT_EQ(cols.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(cols.at({1, 0}), 5);
  Tensor rows = ops::slice_rows(x, 1, 2);
  EXPECT_EQ(rows.shape(), (Shape{1, 4}));
  EXPECT_DOUBLE_EQ(rows.at({0, 2}), 6);
  Tensor glued = ops::concat_cols({ops::slice_cols(x, 0, 1), ops::slice_cols(x, 1, 4)});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(glued[i], x[i]);
  Tensor stacked = ops::concat_rows({ops::slice_rows(x, 0, 1), ops::slice_rows(x, 1, 2)});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(stacked[i], x[i]);
}

TEST(Determinism, IdenticalPipelineIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor a = Tensor::uniform({8, 8}, rng, -2, 2);
    Tensor b = Tensor::uniform({8, 8}, rng, -2, 2);
    Tensor g = Tensor::full({8}, 1.1);
    Tensor be = Tensor::zeros({8});
    Tensor y = ops::layer_norm(ops::softmax(ops::matmul(a, b), 1), g, be, 1e-5);
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  auto first = run();
  auto second = run();
  EXPECT_EQ(0, std::memcmp(first.data(), second.data(), first.size() * sizeof(double)));
}

TEST(Tensor, FiniteInvariantHolds) {
  EXPECT_THROW(Tensor::from({2}, {1.0, std::numeric_limits<double>::infinity()}), Error);
  EXPECT_THROW(Tensor::from({1}, {std::nan("")}), Error);
}
