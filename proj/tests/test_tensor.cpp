// Copyright 2026 The htr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "htr/attention.hpp"
#include "htr/ops.hpp"

namespace htr {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using D = Tensor<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

TEST(Matmul, IdentityAndHandArithmetic) {
  D eye = D::matrix(2, 2, {1, 0, 0, 1});
  D m = D::matrix(2, 2, {1, 2, 3, 4});
  D p = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()),
            (std::vector<double>{1, 2, 3, 4}));
  D r = matmul(D::matrix(1, 2, {1, 2}), D::matrix(2, 1, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r[0], 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(D::zeros({2, 3}), D::zeros({2, 3}));
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3] x [2,3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumIsRowSumsOfB) {
  D a = random_tensor({3, 4}, 1);
  D b = random_tensor({4, 5}, 2);
  a.set_requires_grad(true);
  D loss = sum(matmul(a, b));
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) {
      double row = 0;
      for (std::size_t j = 0; j < 5; ++j) row += b.at(p, j);
      EXPECT_NEAR(a.grad()[i * 4 + p], row, 1e-12);
    }
  auto r = check_gradients([&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Softmax, SymmetryStabilityAndOracle) {
  D u = softmax(D({3}, {0, 0, 0}));
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  D big = softmax(D({2}, {1000, 0}));
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
  EXPECT_FALSE(std::isnan(big[1]));

  D s = softmax(D({3}, {1, 2, 3}));
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(s[i], static_cast<double>(std::exp(1.0L + i) / z), 1e-6);

  Tensor<float> sf = softmax(Tensor<float>({3}, {1, 2, 3}));
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(sf[i], static_cast<double>(std::exp(1.0L + i) / z), 1e-6);
}

TEST(Softmax, NanInputIsNumericError) {
  EXPECT_THROW(softmax(D({2}, {std::nan(""), 1.0})), NumericError);
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    D x = random_tensor({4, 9}, seed, -1e4, 1e4);
    Tensor<float> xf({4, 9}, std::vector<float>(x.data().begin(), x.data().end()));
    D y = softmax(x);
    Tensor<float> yf = softmax(xf);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0, sf = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        s += y.at(r, c);
        sf += yf.at(r, c);
        ASSERT_GE(y.at(r, c), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
      EXPECT_NEAR(sf, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, NonLastAxis) {
  D x = random_tensor({3, 2, 4}, 5);
  D y = softmax(x, 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 4; ++c)
      EXPECT_NEAR(y[a * 8 + c] + y[a * 8 + 4 + c], 1.0, 1e-12);
  auto r = check_gradients(
      [&] { return sum(mul(softmax(x, 1), random_tensor({3, 2, 4}, 6))); },
      {x});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LayerNorm, ConstantSliceAndMoments) {
  D g = D::full({3}, 1.0), b = D::zeros({3});
  D c = layer_norm(D({1, 3}, {7, 7, 7}), g, b, 1e-5);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);

  D y = layer_norm(D({1, 3}, {1, 2, 3}), g, b, 1e-12);
  double mu = (y[0] + y[1] + y[2]) / 3;
  double var = 0;
  for (double v : y.data()) var += (v - mu) * (v - mu);
  var /= 3;
  EXPECT_LT(std::abs(mu), 1e-6);
  EXPECT_NEAR(var, 1.0, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  D x = random_tensor({4, 6}, 11);
  D g = random_tensor({6}, 12, 0.5, 1.5);
  D b = random_tensor({6}, 13);
  D w = random_tensor({4, 6}, 14);
  auto r = check_gradients(
      [&] { return sum(mul(layer_norm(x, g, b, 1e-5), w)); }, {x, g, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LogSumExp, ExactCases) {
  EXPECT_NEAR(log_sum_exp(D({2}, {std::log(2.0), std::log(3.0)})).item(),
              std::log(5.0), 1e-15);
  EXPECT_EQ(log_sum_exp(D({2}, {-kInf, 0.25})).item(), 0.25);
  EXPECT_NEAR(log_sum_exp(D({4}, {0, 0, 0, 0})).item(), std::log(4.0), 1e-9);
  const double all_inf = log_sum_exp(D({3}, {-kInf, -kInf, -kInf})).item();
  EXPECT_EQ(all_inf, -kInf);
  EXPECT_FALSE(std::isnan(all_inf));
}

TEST(LogSumExp, AxisReductionAndGradient) {
  D x = random_tensor({3, 5}, 21);
  D y = log_sum_exp(x, 0);
  EXPECT_EQ(y.shape(), (Shape{5}));
  D w = random_tensor({5}, 22);
  auto r = check_gradients([&] { return sum(mul(log_sum_exp(x, 0), w)); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-4);
  // -inf entries receive zero gradient and never produce NaN.
  D z({1, 3}, {-kInf, 0.5, 1.0}, true);
  D l = sum(log_sum_exp(z));
  backward(l);
  EXPECT_EQ(z.grad()[0], 0.0);
  EXPECT_NEAR(z.grad()[1] + z.grad()[2], 1.0, 1e-12);
}

TEST(Backward, SumAndSquare) {
  D x = random_tensor({2, 3}, 31);
  x.set_requires_grad(true);
  D l1 = sum(x);
  backward(l1);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  D l2 = sum(mul(x, x));
  backward(l2);
  for (std::size_t i = 0; i < x.numel(); ++i)
    EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, NonScalarIsContractError) {
  D x = random_tensor({2, 2}, 1);
  x.set_requires_grad(true);
  D y = scale(x, 2.0);
  EXPECT_THROW(backward(y), ContractError);
  Tape<double>::current().clear();
}

TEST(Backward, TapeIsClearedAndSharedInputsAccumulate) {
  D x = random_tensor({3}, 41);
  x.set_requires_grad(true);
  D a = exp(x);
  D loss = add(sum(mul(a, a)), sum(scale(a, 3.0)));
  EXPECT_GT(Tape<double>::current().size(), 0u);
  backward(loss);
  EXPECT_EQ(Tape<double>::current().size(), 0u);
  for (std::size_t i = 0; i < 3; ++i) {
    const double e = std::exp(x[i]);
    EXPECT_NEAR(x.grad()[i], 2 * e * e + 3 * e, 1e-12);
  }
}

TEST(Backward, CompositeAttentionNormLinear) {
  D x = random_tensor({5, 8}, 51);
  D wq = random_tensor({8, 8}, 52), wk = random_tensor({8, 8}, 53);
  D wv = random_tensor({8, 8}, 54), wo = random_tensor({8, 3}, 55);
  D bo = random_tensor({3}, 56);
  D g = random_tensor({8}, 57, 0.5, 1.5), b = random_tensor({8}, 58);
  D target = random_tensor({5, 3}, 59);
  AttentionMask mask;
  mask.causal = true;
  auto f = [&] {
    D h = attention_heads(matmul(x, wq), matmul(x, wk), matmul(x, wv), 2, mask);
    D n = layer_norm(add(x, h), g, b, 1e-5);
    return sum(mul(linear(n, wo, bo), target));
  };
  auto r = check_gradients(f, {x, wq, wk, wv, wo, bo, g, b}, 1e-4, 20, 3);
  EXPECT_EQ(r.coordinates, 20u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

// Every remaining primitive, each gradient-checked in isolation.
TEST(Primitives, FiniteDifferenceSuite) {
  D a = random_tensor({3, 4}, 61), b = random_tensor({3, 4}, 62);
  D w = random_tensor({3, 4}, 63);
  D pos = random_tensor({3, 4}, 65, 0.5, 2.0);
  auto weighted = [&](const D& y) { return sum(mul(y, w)); };
  auto check = [](auto f, std::vector<D> leaves, const char* name) {
    auto r = check_gradients(f, std::move(leaves));
    EXPECT_LT(r.max_rel_error, 1e-4) << name;
  };
  check([&] { return weighted(add(a, b)); }, {a, b}, "add");
  check([&] { return weighted(sub(a, b)); }, {a, b}, "sub");
  check([&] { return weighted(mul(a, b)); }, {a, b}, "mul");
  check([&] { return weighted(scale(a, -1.7)); }, {a}, "scale");
  check([&] { return weighted(exp(a)); }, {a}, "exp");
  check([&] { return weighted(log(pos)); }, {pos}, "log");
  check([&] { return weighted(gelu(a)); }, {a}, "gelu");
  check([&] { return weighted(log_softmax(a)); }, {a}, "log_softmax");
  check([&] { return weighted(softmax(a)); }, {a}, "softmax");
  D row = random_tensor({4}, 66);
  check([&] { return weighted(add_tiled(a, row)); }, {a, row}, "add_tiled");
  D m = random_tensor({4, 2}, 67), bias = random_tensor({2}, 68);
  D w2 = random_tensor({3, 2}, 69);
  check([&] { return sum(mul(linear(a, m, bias), w2)); }, {a, m, bias}, "linear");
  D table = random_tensor({5, 4}, 70);
  const std::vector<int> ids{4, 0, 4};
  check([&] { return weighted(embedding(table, std::span<const int>(ids))); },
        {table}, "embedding");
  check([&] { return sum(mul(concat<double>({a, b}, 0), concat<double>({w, w}, 0))); },
        {a, b}, "concat rows");
  check([&] { return sum(mul(concat<double>({a, b}, 1), concat<double>({w, b}, 1))); },
        {a, b}, "concat cols");
  check([&] { return sum(mul(reshape(a, {4, 3}), reshape(w, {4, 3}))); }, {a},
        "reshape");
  check([&] { return sum(mul(transpose(a), transpose(w))); }, {a}, "transpose");
  const std::vector<std::uint8_t> mk{0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0};
  check([&] { return weighted(masked_fill(a, std::span<const std::uint8_t>(mk), 0.0)); },
        {a}, "masked_fill");
  check([&] { return sum(mul(slice_rows(a, 1, 3), slice_rows(w, 0, 2))); }, {a},
        "slice_rows");
  D u = random_tensor({2, 4}, 71), wo = random_tensor({6, 4}, 72);
  check([&] { return sum(mul(outer_add(a, u), wo)); }, {a, u}, "outer_add");
  const std::vector<int> cols{3, 0, 2};
  check([&] { return sum(mul(pick(a, std::span<const int>(cols)), random_tensor({3}, 73))); },
        {a}, "pick");
  check([&] { return mean(mul(a, a)); }, {a}, "mean");
  // Dropout with a fixed stream: the mask is a constant of the graph.
  check([&] {
    CounterRng rng(9, 9);
    return weighted(dropout(a, 0.3, rng, true));
  }, {a}, "dropout");
}

TEST(Dropout, DeterministicMaskAndEvalIdentity) {
  Tensor<float> x = Tensor<float>::full({64}, 1.0f);
  CounterRng r1(5, 2), r2(5, 2), r3(5, 3);
  Tensor<float> y1 = dropout(x, 0.1, r1, true);
  Tensor<float> y2 = dropout(x, 0.1, r2, true);
  Tensor<float> y3 = dropout(x, 0.1, r3, true);
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
  EXPECT_FALSE(std::equal(y1.data().begin(), y1.data().end(), y3.data().begin()));
  for (float v : y1.data()) EXPECT_TRUE(v == 0.0f || std::abs(v - 1.0f / 0.9f) < 1e-6f);
  CounterRng r4(5, 2);
  Tensor<float> y4 = dropout(x, 0.1, r4, false);
  EXPECT_EQ(y4.storage(), x.storage());
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(D({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(D::zeros({0, 2}), DimensionError);
  D s = D::scalar(3.0);
  EXPECT_EQ(s.numel(), 1u);
  EXPECT_EQ(s.item(), 3.0);
}

}  // namespace
}  // namespace htr
