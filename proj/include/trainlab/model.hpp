// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

// Dense decoder-only transformer with three residual normalization schemes:
//
//   pre_ln    h <- h + F(Norm(h))
//   sandwich  h <- h + Norm(gamma_post, F(Norm(h))),  gamma_post = c
//   dssn      h <- h + Norm(gamma_post, F(Norm(h))),  gamma_post = c / sqrt(L)
//
// where F is the attention or SwiGLU sub-layer and Norm is RMSNorm. Only the
// post-norm gamma carries the depth scaling; pre-norm gammas start at 1.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trainlab/autograd.hpp"
#include "trainlab/json_util.hpp"
#include "trainlab/masking.hpp"
#include "trainlab/rope.hpp"

namespace trainlab {

enum class NormScheme { pre_ln, sandwich, dssn };
enum class InitScheme { small_init, small_init_residual_scaled, tiny_init };

inline std::string to_string(NormScheme s) {
  switch (s) {
    case NormScheme::pre_ln: return "pre_ln";
    case NormScheme::sandwich: return "sandwich";
    case NormScheme::dssn: return "dssn";
  }
  return "?";
}

inline std::string to_string(InitScheme s) {
  switch (s) {
    case InitScheme::small_init: return "small_init";
    case InitScheme::small_init_residual_scaled: return "small_init_residual_scaled";
    case InitScheme::tiny_init: return "tiny_init";
  }
  return "?";
}

inline NormScheme parse_norm_scheme(const std::string& s) {
  if (s == "pre_ln") return NormScheme::pre_ln;
  if (s == "sandwich") return NormScheme::sandwich;
  if (s == "dssn") return NormScheme::dssn;
  throw ArgumentError("unknown norm scheme '" + s + "' (expected pre_ln, sandwich or dssn)");
}

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "small_init") return InitScheme::small_init;
  if (s == "small_init_residual_scaled") return InitScheme::small_init_residual_scaled;
  if (s == "tiny_init") return InitScheme::tiny_init;
  throw ArgumentError("unknown init scheme '" + s + "' (expected small_init, small_init_residual_scaled or tiny_init)");
}

/// Post-norm gamma initial value c / sqrt(L).
inline double gamma_init(double c, std::size_t layers) {
  if (layers == 0) {
    throw ArgumentError("gamma_init: layer count must be at least 1");
  }
  if (!(c > 0.0)) {
    throw ArgumentError("gamma_init: c must be positive");
  }
  return c / std::sqrt(static_cast<double>(layers));
}

/// Weight standard deviation for an init scheme (residual scaling for
/// small_init_residual_scaled is applied separately, see residual_init_std).
inline double init_std(InitScheme scheme, std::size_t d, std::size_t layers) {
  if (d == 0 || layers == 0) {
    throw ArgumentError("init_std: width and depth must be at least 1");
  }
  const double dd = static_cast<double>(d);
  const double ll = static_cast<double>(layers);
  switch (scheme) {
    case InitScheme::tiny_init: return std::sqrt(1.0 / (2.0 * dd * ll));
    case InitScheme::small_init:
    case InitScheme::small_init_residual_scaled: return std::sqrt(2.0 / (5.0 * dd));
  }
  throw ArgumentError("init_std: unknown scheme");
}

inline double init_std(const std::string& scheme, std::size_t d, std::size_t layers) {
  return init_std(parse_init_scheme(scheme), d, layers);
}

/// Std of the projections that write into the residual stream (attention
/// output, FFN down).
inline double residual_init_std(InitScheme scheme, std::size_t d, std::size_t layers) {
  const double base = init_std(scheme, d, layers);
  return scheme == InitScheme::small_init_residual_scaled ? base / std::sqrt(static_cast<double>(layers)) : base;
}

struct ModelConfig {
  std::size_t layers = 8;
  std::size_t d_model = 128;
  std::size_t n_q_heads = 8;
  std::size_t n_kv_heads = 2;
  std::size_t ffn_inner = 384;
  std::size_t vocab_size = 512;
  NormScheme norm_scheme = NormScheme::dssn;
  InitScheme init_scheme = InitScheme::tiny_init;
  double c_attn = 0.283;
  double c_mlp = 0.432;
  double rope_base = 1e4;
  double embed_std = 0.5;
  double norm_eps = kDefaultNormEps;
  std::size_t max_seq_len = 4096;

  std::size_t head_dim() const { return d_model / n_q_heads; }

  void validate() const {
    if (layers < 1) throw ConfigError("layers must be at least 1");
    if (d_model < 1 || n_q_heads < 1 || n_kv_heads < 1 || ffn_inner < 1 || vocab_size < 1) {
      throw ConfigError("widths, head counts and vocab size must be positive");
    }
    if (n_q_heads % n_kv_heads != 0) {
      throw ConfigError("n_q_heads (" + std::to_string(n_q_heads) + ") must be divisible by n_kv_heads (" +
                        std::to_string(n_kv_heads) + ")");
    }
    if (d_model % n_q_heads != 0) {
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_q_heads (" +
                        std::to_string(n_q_heads) + ")");
    }
    if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
    if (!(c_attn > 0.0) || !(c_mlp > 0.0)) throw ConfigError("c_attn and c_mlp must be positive");
    if (!(rope_base > 0.0)) throw ConfigError("rope_base must be positive");
    if (!(embed_std > 0.0)) throw ConfigError("embed_std must be positive");
    if (!(norm_eps >= 0.0)) throw ConfigError("norm_eps must be non-negative");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be positive");
  }

  /// 94-layer, 12288-wide reference architecture (not buildable on a desk).
  static ModelConfig reference() {
    ModelConfig c;
    c.layers = 94;
    c.d_model = 12288;
    c.n_q_heads = 96;
    c.n_kv_heads = 8;
    c.ffn_inner = 28672;
    c.vocab_size = 153376;
    c.c_attn = 0.283;
    c.c_mlp = 0.432;
    c.embed_std = 0.5;
    c.max_seq_len = 131072;
    return c;
  }

  static ModelConfig toy() { return ModelConfig{}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"layers", c.layers},         {"d_model", c.d_model},
           {"n_q_heads", c.n_q_heads},   {"n_kv_heads", c.n_kv_heads},
           {"ffn_inner", c.ffn_inner},   {"vocab_size", c.vocab_size},
           {"norm_scheme", to_string(c.norm_scheme)}, {"init_scheme", to_string(c.init_scheme)},
           {"c_attn", c.c_attn},         {"c_mlp", c.c_mlp},
           {"rope_base", c.rope_base},   {"embed_std", c.embed_std},
           {"norm_eps", c.norm_eps},     {"max_seq_len", c.max_seq_len}};
}

/// Reads the fields present in `j` on top of `base`.
inline ModelConfig model_config_from_json(const json& j, const std::string& path = "model",
                                          ModelConfig base = ModelConfig::toy()) {
  JsonReader r(j, path);
  ModelConfig c = base;
  r.get("layers", c.layers);
  r.get("d_model", c.d_model);
  r.get("n_q_heads", c.n_q_heads);
  r.get("n_kv_heads", c.n_kv_heads);
  r.get("ffn_inner", c.ffn_inner);
  r.get("vocab_size", c.vocab_size);
  std::string norm = to_string(c.norm_scheme);
  std::string init = to_string(c.init_scheme);
  r.get("norm_scheme", norm);
  r.get("init_scheme", init);
  try {
    c.norm_scheme = parse_norm_scheme(norm);
  } catch (const ArgumentError& e) {
    throw ConfigError(r.child_path("norm_scheme") + ": " + e.what());
  }
  try {
    c.init_scheme = parse_init_scheme(init);
  } catch (const ArgumentError& e) {
    throw ConfigError(r.child_path("init_scheme") + ": " + e.what());
  }
  r.get("c_attn", c.c_attn);
  r.get("c_mlp", c.c_mlp);
  r.get("rope_base", c.rope_base);
  r.get("embed_std", c.embed_std);
  r.get("norm_eps", c.norm_eps);
  r.get("max_seq_len", c.max_seq_len);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

inline void from_json(const json& j, ModelConfig& c) { c = model_config_from_json(j); }

/// Parameters of one transformer layer. Weights are stored [in, out] so a
/// projection is x * W.
struct DssnBlock {
  Tensor wq, wk, wv, wo;
  Tensor w_gate, w_up, w_down;
  Tensor gamma_pre_attn, gamma_post_attn, gamma_pre_mlp, gamma_post_mlp;

  bool has_post_norm() const { return !gamma_post_attn.empty(); }
};

struct Model {
  ModelConfig config;
  Tensor embedding;  // [vocab, d]
  std::vector<DssnBlock> blocks;
  Tensor gamma_final;  // [d]
  Tensor lm_head;      // [d, vocab]
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct NamedConstParam {
  std::string name;
  const Tensor* tensor;
};

namespace detail {

template <class M, class Fn>
void visit_parameters(M& model, Fn&& fn) {
  fn("embedding", model.embedding);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    auto& b = model.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    fn(p + "wq", b.wq);
    fn(p + "wk", b.wk);
    fn(p + "wv", b.wv);
    fn(p + "wo", b.wo);
    fn(p + "w_gate", b.w_gate);
    fn(p + "w_up", b.w_up);
    fn(p + "w_down", b.w_down);
    fn(p + "gamma_pre_attn", b.gamma_pre_attn);
    if (b.has_post_norm()) fn(p + "gamma_post_attn", b.gamma_post_attn);
    fn(p + "gamma_pre_mlp", b.gamma_pre_mlp);
    if (b.has_post_norm()) fn(p + "gamma_post_mlp", b.gamma_post_mlp);
  }
  fn("gamma_final", model.gamma_final);
  fn("lm_head", model.lm_head);
}

}  // namespace detail

/// Every trainable tensor in a fixed order with a stable dotted name.
inline std::vector<NamedParam> parameters(Model& model) {
  std::vector<NamedParam> out;
  detail::visit_parameters(model, [&](std::string name, Tensor& t) {
    out.push_back({std::move(name), &t});
  });
  return out;
}

inline std::vector<NamedConstParam> parameters(const Model& model) {
  std::vector<NamedConstParam> out;
  detail::visit_parameters(model, [&](std::string name, const Tensor& t) {
    out.push_back({std::move(name), &t});
  });
  return out;
}

inline std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& p : parameters(model)) n += p.tensor->size();
  return n;
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

/// Builds a model with weights drawn N(0, std^2) per the init scheme, the
/// embedding drawn N(0, embed_std^2) and gammas set per the norm scheme.
/// Deterministic in (config, seed).
inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t hd = config.head_dim();
  const std::size_t q_width = config.n_q_heads * hd;
  const std::size_t kv_width = config.n_kv_heads * hd;
  const double std_w = init_std(config.init_scheme, d, config.layers);
  const double std_res = residual_init_std(config.init_scheme, d, config.layers);

  Model m;
  m.config = config;
  m.embedding = normal_tensor({config.vocab_size, d}, config.embed_std, rng);
  double post_attn = 0.0;
  double post_mlp = 0.0;
  if (config.norm_scheme == NormScheme::dssn) {
    post_attn = gamma_init(config.c_attn, config.layers);
    post_mlp = gamma_init(config.c_mlp, config.layers);
  } else if (config.norm_scheme == NormScheme::sandwich) {
    post_attn = config.c_attn;
    post_mlp = config.c_mlp;
  }
  m.blocks.resize(config.layers);
  for (auto& b : m.blocks) {
    b.wq = normal_tensor({d, q_width}, std_w, rng);
    b.wk = normal_tensor({d, kv_width}, std_w, rng);
    b.wv = normal_tensor({d, kv_width}, std_w, rng);
    b.wo = normal_tensor({q_width, d}, std_res, rng);
    b.w_gate = normal_tensor({d, config.ffn_inner}, std_w, rng);
    b.w_up = normal_tensor({d, config.ffn_inner}, std_w, rng);
    b.w_down = normal_tensor({config.ffn_inner, d}, std_res, rng);
    b.gamma_pre_attn = Tensor({d}, 1.0);
    b.gamma_pre_mlp = Tensor({d}, 1.0);
    if (config.norm_scheme != NormScheme::pre_ln) {
      b.gamma_post_attn = Tensor({d}, post_attn);
      b.gamma_post_mlp = Tensor({d}, post_mlp);
    }
  }
  m.gamma_final = Tensor({d}, 1.0);
  m.lm_head = normal_tensor({d, config.vocab_size}, std_w, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass on a tape.

enum class ProbeSite { attn_out_proj_in, attn_out_proj_out, ffn_down_proj_in, ffn_down_proj_out };

inline std::string to_string(ProbeSite s) {
  switch (s) {
    case ProbeSite::attn_out_proj_in: return "attn_out_proj.input";
    case ProbeSite::attn_out_proj_out: return "attn_out_proj";
    case ProbeSite::ffn_down_proj_in: return "ffn_down_proj.input";
    case ProbeSite::ffn_down_proj_out: return "ffn_down_proj";
  }
  return "?";
}

/// Read-only observer of intermediate activations.
using ActivationProbe = std::function<void(std::size_t layer, ProbeSite site, const Tensor& value)>;

struct BlockVars {
  Var wq, wk, wv, wo, w_gate, w_up, w_down;
  Var gamma_pre_attn, gamma_post_attn, gamma_pre_mlp, gamma_post_mlp;
  bool has_post = false;
};

struct ModelVars {
  Var embedding, gamma_final, lm_head;
  std::vector<BlockVars> blocks;
  std::vector<Var> all;  // same order as parameters(model)
};

inline ModelVars bind_parameters(Tape& tape, const Model& model, bool requires_grad) {
  ModelVars v;
  auto bind = [&](const Tensor& t) {
    Var x = tape.param(t, requires_grad);
    v.all.push_back(x);
    return x;
  };
  v.embedding = bind(model.embedding);
  for (const auto& b : model.blocks) {
    BlockVars bv;
    bv.wq = bind(b.wq);
    bv.wk = bind(b.wk);
    bv.wv = bind(b.wv);
    bv.wo = bind(b.wo);
    bv.w_gate = bind(b.w_gate);
    bv.w_up = bind(b.w_up);
    bv.w_down = bind(b.w_down);
    bv.gamma_pre_attn = bind(b.gamma_pre_attn);
    if (b.has_post_norm()) bv.gamma_post_attn = bind(b.gamma_post_attn);
    bv.gamma_pre_mlp = bind(b.gamma_pre_mlp);
    if (b.has_post_norm()) bv.gamma_post_mlp = bind(b.gamma_post_mlp);
    bv.has_post = b.has_post_norm();
    v.blocks.push_back(bv);
  }
  v.gamma_final = bind(model.gamma_final);
  v.lm_head = bind(model.lm_head);
  return v;
}

/// One residual layer with caller-supplied sub-layers. Each sub-layer maps
/// the pre-normalized hidden state to its branch output.
template <class AttnFn, class MlpFn>
Var residual_block(Var h, const BlockVars& b, double eps, AttnFn&& attn, MlpFn&& mlp) {
  Var a = attn(rmsnorm(h, b.gamma_pre_attn, eps));
  h = add(h, b.has_post ? rmsnorm(a, b.gamma_post_attn, eps) : a);
  Var f = mlp(rmsnorm(h, b.gamma_pre_mlp, eps));
  return add(h, b.has_post ? rmsnorm(f, b.gamma_post_mlp, eps) : f);
}

/// Everything a layer needs besides its weights.
struct LayerContext {
  const ModelConfig* config = nullptr;
  const CompressedMask* mask = nullptr;
  std::span<const std::int64_t> positions;
  const ActivationProbe* probe = nullptr;
  std::size_t layer = 0;
};

inline void emit(const LayerContext& ctx, ProbeSite site, Var v) {
  if (ctx.probe != nullptr && *ctx.probe) {
    (*ctx.probe)(ctx.layer, site, v.value());
  }
}

/// Grouped-query self-attention with rotary embeddings on q and k.
inline Var attention_sublayer(Var x, const BlockVars& b, const LayerContext& ctx) {
  const ModelConfig& cfg = *ctx.config;
  const std::size_t t = x.value().rows();
  const std::size_t hd = cfg.head_dim();
  Var q = reshape(matmul(x, b.wq), {t, cfg.n_q_heads, hd});
  Var k = reshape(matmul(x, b.wk), {t, cfg.n_kv_heads, hd});
  Var v = reshape(matmul(x, b.wv), {t, cfg.n_kv_heads, hd});
  q = rope(q, ctx.positions, cfg.rope_base);
  k = rope(k, ctx.positions, cfg.rope_base);
  Var o = reshape(attention(q, k, v, *ctx.mask), {t, cfg.n_q_heads * hd});
  emit(ctx, ProbeSite::attn_out_proj_in, o);
  Var out = matmul(o, b.wo);
  emit(ctx, ProbeSite::attn_out_proj_out, out);
  return out;
}

inline Var mlp_sublayer(Var x, const BlockVars& b, const LayerContext& ctx) {
  Var a = swiglu(matmul(x, b.w_gate), matmul(x, b.w_up));
  emit(ctx, ProbeSite::ffn_down_proj_in, a);
  Var out = matmul(a, b.w_down);
  emit(ctx, ProbeSite::ffn_down_proj_out, out);
  return out;
}

/// h <- h + PostNorm(ATTN(PreNorm(h))); h <- h + PostNorm(MLP(PreNorm(h))),
/// with the post-norms skipped for pre_ln blocks.
inline Var dssn_block_forward(Var h, const BlockVars& b, const LayerContext& ctx) {
  if (h.value().rank() != 2 || h.value().dim(1) != ctx.config->d_model) {
    throw DimensionError("block input must be [T, " + std::to_string(ctx.config->d_model) + "], got " +
                         shape_str(h.value().shape()));
  }
  if (ctx.mask->total() != h.value().dim(0)) {
    throw DimensionError("mask covers " + std::to_string(ctx.mask->total()) + " tokens, block input has " +
                         std::to_string(h.value().dim(0)));
  }
  return residual_block(
      h, b, ctx.config->norm_eps, [&](Var x) { return attention_sublayer(x, b, ctx); },
      [&](Var x) { return mlp_sublayer(x, b, ctx); });
}

/// Full forward to logits [T, vocab]. Positions default to 0..T-1.
inline Var model_forward(const ModelVars& vars, const ModelConfig& cfg, std::span<const int> tokens,
                         const CompressedMask& mask, const ActivationProbe* probe = nullptr,
                         std::span<const std::int64_t> positions = {}) {
  if (tokens.empty()) {
    throw ArgumentError("model_forward: empty token sequence");
  }
  if (mask.total() != tokens.size()) {
    throw DimensionError("model_forward: mask covers " + std::to_string(mask.total()) + " tokens, got " +
                         std::to_string(tokens.size()));
  }
  std::vector<std::int64_t> default_pos;
  if (positions.empty()) {
    default_pos = iota_positions(tokens.size());
    positions = default_pos;
  }
  Var h = embedding(vars.embedding, tokens);
  for (std::size_t l = 0; l < vars.blocks.size(); ++l) {
    LayerContext ctx{&cfg, &mask, positions, probe, l};
    try {
      h = dssn_block_forward(h, vars.blocks[l], ctx);
    } catch (const NumericError& e) {
      throw NumericError("layer " + std::to_string(l) + ": " + e.what());
    }
    const std::size_t bad = h.value().first_non_finite();
    if (bad != h.value().size()) {
      throw NumericError("non-finite activation in layer " + std::to_string(l) + " at flat index " +
                         std::to_string(bad));
    }
  }
  h = rmsnorm(h, vars.gamma_final, cfg.norm_eps);
  return matmul(h, vars.lm_head);
}

/// Inference-only forward returning logits [T, vocab].
inline Tensor forward(const Model& model, std::span<const int> tokens, const CompressedMask& mask,
                      const ActivationProbe* probe = nullptr) {
  Tape tape;
  ModelVars vars = bind_parameters(tape, model, /*requires_grad=*/false);
  return model_forward(vars, model.config, tokens, mask, probe).value();
}

/// Residual stream after the final norm, [T, d] (no LM head).
inline Tensor final_hidden(const Model& model, std::span<const int> tokens, const CompressedMask& mask) {
  Tape tape;
  ModelVars vars = bind_parameters(tape, model, false);
  const auto pos = iota_positions(tokens.size());
  Var h = embedding(vars.embedding, tokens);
  for (std::size_t l = 0; l < vars.blocks.size(); ++l) {
    LayerContext ctx{&model.config, &mask, pos, nullptr, l};
    h = dssn_block_forward(h, vars.blocks[l], ctx);
  }
  return rmsnorm(h, vars.gamma_final, model.config.norm_eps).value();
}

}  // namespace trainlab
