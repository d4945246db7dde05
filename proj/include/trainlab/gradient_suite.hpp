// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "trainlab/grad_check.hpp"
#include "trainlab/model.hpp"

namespace trainlab {

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

// sum(w * y) with fixed positive weights so no output is ignored.
inline Var weighted_reduce(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var w = y.tape().constant(uniform_tensor(y.value().shape(), rng, 0.5, 1.5));
  return sum(mul(w, y));
}

}  // namespace detail

/// Block config used for composed gradient checks: d=8, 2 query heads over
/// one KV head, FFN width 16.
inline ModelConfig grad_check_block_config(NormScheme scheme = NormScheme::dssn) {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 8;
  c.n_q_heads = 2;
  c.n_kv_heads = 1;
  c.ffn_inner = 16;
  c.vocab_size = 11;
  c.norm_scheme = scheme;
  c.rope_base = 100.0;
  return c;
}

/// Checks one DSSN block end to end with respect to its input and every
/// parameter. Gammas are randomized so the check is not at a special point.
inline GradCheckReport block_grad_check(const ModelConfig& cfg, const CompressedMask& mask, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelConfig wide = cfg;
  wide.init_scheme = InitScheme::small_init;
  Model m = build_model(wide, seed);
  const DssnBlock& blk = m.blocks[0];
  const std::size_t t = mask.total();
  std::vector<Tensor> points{detail::uniform_tensor({t, cfg.d_model}, rng, -1.0, 1.0)};
  for (const Tensor* w : {&blk.wq, &blk.wk, &blk.wv, &blk.wo, &blk.w_gate, &blk.w_up, &blk.w_down}) {
    Tensor x = *w;
    for (double& v : x.data()) v *= 4.0;
    points.push_back(std::move(x));
  }
  const bool post = blk.has_post_norm();
  const std::size_t n_gamma = post ? 4 : 2;
  for (std::size_t i = 0; i < n_gamma; ++i) {
    points.push_back(detail::uniform_tensor({cfg.d_model}, rng, 0.5, 1.5));
  }
  const auto pos = iota_positions(t);
  const std::uint64_t wseed = rng();
  return grad_check(
      [&](Tape&, std::span<const Var> in) {
        BlockVars b;
        b.wq = in[1];
        b.wk = in[2];
        b.wv = in[3];
        b.wo = in[4];
        b.w_gate = in[5];
        b.w_up = in[6];
        b.w_down = in[7];
        b.gamma_pre_attn = in[8];
        b.gamma_pre_mlp = in[9];
        if (post) {
          b.gamma_post_attn = in[10];
          b.gamma_post_mlp = in[11];
        }
        b.has_post = post;
        LayerContext ctx{&cfg, &mask, pos, nullptr, 0};
        return detail::weighted_reduce(dssn_block_forward(in[0], b, ctx), wseed);
      },
      points);
}

/// Gradient checks for every differentiable op at one random shape per op
/// (dimensions up to `max_dim`), plus the composed block for each norm scheme.
inline std::vector<NamedGradCheck> gradient_suite(std::uint64_t seed, std::size_t max_dim = 16) {
  std::mt19937_64 rng(seed);
  auto dim = [&] { return std::uniform_int_distribution<std::size_t>(1, max_dim)(rng); };
  std::vector<NamedGradCheck> out;
  auto run = [&](std::string name, const ScalarFn& f, std::vector<Tensor> pts) {
    out.push_back({std::move(name), grad_check(f, pts)});
  };
  const std::uint64_t ws = rng();
  auto reduce = [ws](Var y) { return detail::weighted_reduce(y, ws); };
  using detail::uniform_tensor;

  {
    const std::size_t r = dim(), k = dim(), c = dim();
    run("matmul", [&](Tape&, std::span<const Var> in) { return reduce(matmul(in[0], in[1])); },
        {uniform_tensor({r, k}, rng, -1, 1), uniform_tensor({k, c}, rng, -1, 1)});
  }
  {
    const std::size_t r = dim(), c = dim();
    run("add", [&](Tape&, std::span<const Var> in) { return reduce(add(in[0], in[1])); },
        {uniform_tensor({r, c}, rng, -1, 1), uniform_tensor({r, c}, rng, -1, 1)});
    run("mul", [&](Tape&, std::span<const Var> in) { return reduce(mul(in[0], in[1])); },
        {uniform_tensor({r, c}, rng, -1, 1), uniform_tensor({r, c}, rng, -1, 1)});
    run("scale", [&](Tape&, std::span<const Var> in) { return reduce(scale(in[0], -0.7)); },
        {uniform_tensor({r, c}, rng, -1, 1)});
    run("reshape", [&](Tape&, std::span<const Var> in) { return reduce(reshape(in[0], {c, r})); },
        {uniform_tensor({r, c}, rng, -1, 1)});
    run("sum", [&](Tape&, std::span<const Var> in) { return sum(in[0]); }, {uniform_tensor({r, c}, rng, -1, 1)});
  }
  {
    const std::size_t r = dim(), c = dim();
    run("rmsnorm", [&](Tape&, std::span<const Var> in) { return reduce(rmsnorm(in[0], in[1])); },
        {uniform_tensor({r, c}, rng, -1, 1), uniform_tensor({c}, rng, -1.5, 1.5)});
  }
  {
    const std::size_t r = dim(), c = dim();
    run("swiglu", [&](Tape&, std::span<const Var> in) { return reduce(swiglu(in[0], in[1])); },
        {uniform_tensor({r, c}, rng, -4, 4), uniform_tensor({r, c}, rng, -1, 1)});
  }
  {
    const std::size_t r = dim(), c = dim();
    run("softmax_lastdim", [&](Tape&, std::span<const Var> in) { return reduce(softmax_lastdim(in[0])); },
        {uniform_tensor({r, c}, rng, -3, 3)});
  }
  {
    const std::size_t v = dim(), c = dim(), n = dim();
    std::vector<int> ids(n);
    for (auto& id : ids) id = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, v - 1)(rng));
    run("embedding", [&](Tape&, std::span<const Var> in) { return reduce(embedding(in[0], ids)); },
        {uniform_tensor({v, c}, rng, -1, 1)});
  }
  {
    const std::size_t t = dim(), h = std::max<std::size_t>(1, dim() / 4), hd = 2 * std::max<std::size_t>(1, dim() / 2);
    const auto pos = iota_positions(t, 3);
    run("rope", [&](Tape&, std::span<const Var> in) { return reduce(rope(in[0], pos, 50.0)); },
        {uniform_tensor({t, h, hd}, rng, -1, 1)});
  }
  {
    const std::size_t t = std::max<std::size_t>(2, dim() / 2);
    std::vector<std::size_t> lens;
    for (std::size_t left = t; left > 0;) {
      const std::size_t l = std::min(left, std::uniform_int_distribution<std::size_t>(1, 4)(rng));
      lens.push_back(l);
      left -= l;
    }
    const CompressedMask mask(lens);
    run("attention",
        [&](Tape&, std::span<const Var> in) { return reduce(attention(in[0], in[1], in[2], mask)); },
        {uniform_tensor({t, 4, 4}, rng, -1, 1), uniform_tensor({t, 2, 4}, rng, -1, 1),
         uniform_tensor({t, 2, 4}, rng, -1, 1)});
  }
  {
    const std::size_t n = dim(), v = dim();
    std::vector<int> targets(n);
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
      targets[i] = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, v - 1)(rng));
      weights[i] = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    }
    run("cross_entropy", [&](Tape&, std::span<const Var> in) { return cross_entropy(in[0], targets, weights); },
        {uniform_tensor({n, v}, rng, -2, 2)});
  }
  const CompressedMask block_mask(std::vector<std::size_t>{4});
  for (NormScheme s : {NormScheme::dssn, NormScheme::sandwich, NormScheme::pre_ln}) {
    out.push_back({"block." + to_string(s), block_grad_check(grad_check_block_config(s), block_mask, rng())});
  }
  out.push_back({"block.dssn.two_docs", block_grad_check(grad_check_block_config(), CompressedMask(std::vector<std::size_t>{1, 3}), rng())});
  return out;
}

}  // namespace trainlab
