// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "test_util.hpp"
#include "trainlab/autograd.hpp"
#include "trainlab/grad_check.hpp"

namespace trainlab {
namespace {

using testing::random_size;
using testing::random_tensor;

TEST(Tensor, RejectsMismatchedStorage) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.dim(-1), 3u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
}

TEST(RmsNorm, UnitRmsIsFixedPoint) {
  Tensor x({4}, {1, 1, 1, 1});
  Tensor y = rmsnorm(x, Tensor({4}, 1.0), 0.0);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(RmsNorm, HandEvaluated) {
  Tensor y = rmsnorm(Tensor({2}, {3, 4}), Tensor({2}, 1.0), 0.0);
  EXPECT_NEAR(y[0], 0.848528137423857, 1e-12);
  EXPECT_NEAR(y[1], 1.131370849898476, 1e-12);
}

TEST(RmsNorm, ZeroGammaGivesZero) {
  std::mt19937_64 rng(1);
  Tensor y = rmsnorm(random_tensor({3, 5}, rng), Tensor({5}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(RmsNorm, Errors) {
  EXPECT_THROW(rmsnorm(Tensor({2, 3}), Tensor({4}, 1.0)), DimensionError);
  Tensor bad({3}, {1.0, std::numeric_limits<double>::quiet_NaN(), 2.0});
  EXPECT_THROW(rmsnorm(bad, Tensor({3}, 1.0)), NumericError);
  EXPECT_THROW(rmsnorm(Tensor({3}, 1.0), Tensor({3}, 1.0), -1.0), ArgumentError);
}

TEST(RmsNorm, UnitGammaOutputHasUnitRms) {
  std::mt19937_64 rng(7);
  const double eps = 1e-6;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = random_size(rng, 1, 64);
    Tensor x = random_tensor({d}, rng, -3.0, 3.0);
    double ms = 0.0;
    for (double v : x.data()) ms += v * v;
    ms /= static_cast<double>(d);
    Tensor y = rmsnorm(x, Tensor({d}, 1.0), eps);
    double ys = 0.0;
    for (double v : y.data()) ys += v * v;
    const double rms = std::sqrt(ys / static_cast<double>(d));
    // rms = sqrt(ms / (ms + eps)) so 1 - rms <= eps / ms.
    EXPECT_LE(std::abs(rms - 1.0), eps / ms + 1e-12);
  }
}

TEST(SwiGlu, Examples) {
  EXPECT_EQ(swiglu(Tensor({1}, {0.0}), Tensor({1}, {123.0}))[0], 0.0);
  EXPECT_NEAR(swiglu(Tensor({1}, {1.0}), Tensor({1}, {2.0}))[0], 1.4621171572600098, 1e-12);
  const double sat = swiglu(Tensor({1}, {-30.0}), Tensor({1}, {1.0}))[0];
  EXPECT_NEAR(sat, -2.8072868906517896e-12, 1e-15);
  EXPECT_LT(std::abs(sat), 1e-11);
  EXPECT_THROW(swiglu(Tensor({2}), Tensor({3})), DimensionError);
}

TEST(Softmax, Examples) {
  Tensor a = softmax_lastdim(Tensor({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  Tensor b = softmax_lastdim(Tensor({3}, {1.0, 2.0, 3.0}));
  EXPECT_NEAR(b[0], 0.09003057317038046, 1e-12);
  EXPECT_NEAR(b[1], 0.24472847105479767, 1e-12);
  EXPECT_NEAR(b[2], 0.6652409557748219, 1e-12);
  EXPECT_THROW(softmax_lastdim(Tensor(Shape{2, 0})), DimensionError);
  Tensor big = softmax_lastdim(Tensor({2}, {1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(big[0], 0.5);
}

TEST(MatMul, IdentityAndShapes) {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({2, 5}, rng);
  EXPECT_EQ(matmul(Tensor({2, 2}, {1, 0, 0, 1}), a), a);
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
  Tensor batched = matmul(random_tensor({3, 4, 2}, rng), a);
  EXPECT_EQ(batched.shape(), (Shape{3, 4, 5}));
}

TEST(Embedding, LookupAndRange) {
  Tensor table({3, 2}, {0, 1, 2, 3, 4, 5});
  std::vector<int> ids{2, 0};
  Tensor out = embedding_lookup(table, ids);
  EXPECT_EQ(out, Tensor({2, 2}, {4, 5, 0, 1}));
  std::vector<int> bad{3};
  EXPECT_THROW(embedding_lookup(table, bad), ArgumentError);
}

// ---------------------------------------------------------------------------
// Reverse mode vs central finite differences.

TEST(GradCheck, Polynomial) {
  auto r = grad_check([](Var x) { return mul(x, x); }, Tensor::scalar(3.0));
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.numeric, 6.0, 1e-6);
}

TEST(GradCheck, RmsNormSum) {
  std::mt19937_64 rng(11);
  auto r = grad_check(
      [](Tape&, std::span<const Var> in) { return sum(rmsnorm(in[0], in[1])); },
      {random_tensor({8}, rng), random_tensor({8}, rng, 0.5, 1.5)});
  EXPECT_TRUE(r.pass) << r.max_rel_err;
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(GradCheck, ReportsNonFiniteGradient) {
  // d/dx sqrt-like blowup: rmsnorm of an all-zero row with eps = 0.
  EXPECT_THROW(grad_check([](Var x) { return sum(rmsnorm(x, x.tape().constant(Tensor({2}, 1.0)), 0.0)); },
                          Tensor({2}, 0.0)),
               NumericError);
}

// Random weights make every op's scalar reduction sensitive to all outputs.
Var weighted_sum(Var y, std::mt19937_64& rng) {
  Var w = y.tape().constant(random_tensor(y.value().shape(), rng, 0.5, 1.5));
  return sum(mul(w, y));
}

TEST(GradCheck, EveryOpOnRandomShapes) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t rows = random_size(rng, 1, 16);
    const std::size_t cols = random_size(rng, 1, 16);
    const std::size_t inner = random_size(rng, 1, 16);
    const std::uint64_t wseed = rng();
    auto check = [&](const char* name, const ScalarFn& f, const std::vector<Tensor>& pts) {
      auto r = grad_check(f, pts);
      EXPECT_LE(r.max_rel_err, 1e-4) << name << " rows=" << rows << " cols=" << cols;
    };
    auto ws = [wseed](Var y) {
      std::mt19937_64 g(wseed);
      return weighted_sum(y, g);
    };
    check("matmul", [&](Tape&, std::span<const Var> in) { return ws(matmul(in[0], in[1])); },
          {random_tensor({rows, inner}, rng), random_tensor({inner, cols}, rng)});
    check("add", [&](Tape&, std::span<const Var> in) { return ws(add(in[0], in[1])); },
          {random_tensor({rows, cols}, rng), random_tensor({rows, cols}, rng)});
    check("mul", [&](Tape&, std::span<const Var> in) { return ws(mul(in[0], in[1])); },
          {random_tensor({rows, cols}, rng), random_tensor({rows, cols}, rng)});
    check("rmsnorm", [&](Tape&, std::span<const Var> in) { return ws(rmsnorm(in[0], in[1])); },
          {random_tensor({rows, cols}, rng), random_tensor({cols}, rng)});
    check("swiglu", [&](Tape&, std::span<const Var> in) { return ws(swiglu(in[0], in[1])); },
          {random_tensor({rows, cols}, rng, -3, 3), random_tensor({rows, cols}, rng)});
    check("softmax", [&](Tape&, std::span<const Var> in) { return ws(softmax_lastdim(in[0])); },
          {random_tensor({rows, cols}, rng, -2, 2)});
    check("scale+reshape", [&](Tape&, std::span<const Var> in) { return ws(reshape(scale(in[0], 1.7), {cols, rows})); },
          {random_tensor({rows, cols}, rng)});
    std::vector<int> ids(rows);
    for (auto& id : ids) id = static_cast<int>(random_size(rng, 0, inner - 1));
    check("embedding", [&](Tape&, std::span<const Var> in) { return ws(embedding(in[0], ids)); },
          {random_tensor({inner, cols}, rng)});
    std::vector<int> targets(rows);
    std::vector<double> weights(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      targets[i] = static_cast<int>(random_size(rng, 0, cols - 1));
      weights[i] = i % 3 == 2 ? 0.0 : 1.0;
    }
    weights[0] = 1.0;
    check("cross_entropy", [&](Tape&, std::span<const Var> in) { return cross_entropy(in[0], targets, weights); },
          {random_tensor({rows, cols}, rng, -2, 2)});
  }
}

TEST(GradCheck, RopeAndAttention) {
  std::mt19937_64 rng(99);
  const std::size_t t = 6;
  const CompressedMask mask(std::vector<std::size_t>{2, 3, 1});
  const auto pos = iota_positions(t);
  auto r = grad_check(
      [&](Tape&, std::span<const Var> in) {
        std::mt19937_64 g(5);
        return weighted_sum(rope(in[0], pos, 10.0), g);
      },
      {random_tensor({t, 2, 4}, rng)});
  EXPECT_LE(r.max_rel_err, 1e-4);
  auto a = grad_check(
      [&](Tape&, std::span<const Var> in) {
        std::mt19937_64 g(6);
        return weighted_sum(attention(in[0], in[1], in[2], mask), g);
      },
      {random_tensor({t, 4, 4}, rng), random_tensor({t, 2, 4}, rng), random_tensor({t, 2, 4}, rng)});
  EXPECT_LE(a.max_rel_err, 1e-4) << a.worst_input << ":" << a.worst_index;
}

TEST(Autograd, FanOutSumsBranchGradientsExactly) {
  std::mt19937_64 rng(5);
  const Tensor x0 = random_tensor({4, 6}, rng);
  const Tensor gamma = random_tensor({6}, rng);
  const Tensor w = random_tensor({4, 6}, rng);
  auto branch_f = [&](Var x) { return sum(mul(x.tape().constant(w), rmsnorm(x, x.tape().constant(gamma)))); };
  auto branch_g = [&](Var x) { return sum(swiglu(x, x)); };

  Tape both;
  Var xb = both.leaf(x0);
  both.backward(add(branch_f(xb), branch_g(xb)));

  Tape tf;
  Var xf = tf.leaf(x0);
  tf.backward(branch_f(xf));
  Tape tg;
  Var xg = tg.leaf(x0);
  tg.backward(branch_g(xg));

  for (std::size_t i = 0; i < x0.size(); ++i) {
    EXPECT_EQ(xb.grad()[i], xf.grad()[i] + xg.grad()[i]);
  }
}

TEST(Autograd, BackwardVisitsEachNodeOnce) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(2.0));
  int calls = 0;
  Var y = tape.record(Tensor::scalar(4.0), {x}, [&calls, ix = x.id()](Tape& t, const Tensor& g) {
    ++calls;
    t.grad_slot(ix)[0] += 2.0 * g[0];
  });
  tape.backward(add(y, y));
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Autograd, RepeatedRunsAreBitIdentical) {
  std::mt19937_64 rng(8);
  const Tensor a = random_tensor({7, 9}, rng);
  const Tensor b = random_tensor({9, 5}, rng);
  auto run = [&] {
    Tape t;
    Var va = t.leaf(a);
    Var vb = t.leaf(b);
    t.backward(sum(softmax_lastdim(matmul(va, vb))));
    return std::make_pair(va.grad(), vb.grad());
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace trainlab
