// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trainlab/errors.hpp"
#include "trainlab/json_util.hpp"
#include "trainlab/tensor.hpp"

namespace trainlab {

struct OptimHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("optim: beta1 and beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("optim: eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("optim: weight_decay must be non-negative");
    if (!(clip_norm > 0.0)) throw ConfigError("optim: clip_norm must be positive");
  }

  friend bool operator==(const OptimHyper&, const OptimHyper&) = default;
};

inline void to_json(json& j, const OptimHyper& h) {
  j = {{"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}, {"weight_decay", h.weight_decay},
       {"clip_norm", h.clip_norm}};
}

inline OptimHyper optim_hyper_from_json(const json& j, const std::string& path = "optim") {
  OptimHyper h;
  JsonReader r(j, path);
  r.get("beta1", h.beta1);
  r.get("beta2", h.beta2);
  r.get("eps", h.eps);
  r.get("weight_decay", h.weight_decay);
  r.get("clip_norm", h.clip_norm);
  r.finish();
  try {
    h.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return h;
}

/// First and second moments per parameter plus the shared update counter.
struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// One AdamW update with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Non-finite gradients abort the step before any state changes.
inline void adamw_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamWState& state,
                       const OptimHyper& hp, double lr) {
  if (params.size() != grads.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *grads[i], "adamw_step");
    const std::size_t bad = grads[i]->first_non_finite();
    if (bad != grads[i]->size()) {
      throw NumericError("adamw_step: non-finite gradient in parameter " + std::to_string(i) + " at index " +
                         std::to_string(bad));
    }
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  } else if (state.m.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  const double b1 = hp.beta1, b2 = hp.beta2, eps = hp.eps, wd = hp.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* theta = params[i]->ptr();
    const double* g = grads[i]->ptr();
    double* m = state.m[i].ptr();
    double* v = state.v[i].ptr();
    const std::size_t n = params[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      theta[j] -= lr * (mh / (std::sqrt(vh) + eps) + wd * theta[j]);
    }
  }
}

/// Global L2 norm over all tensors, summed in order.
inline double global_norm(std::span<const Tensor* const> grads) {
  double ss = 0.0;
  for (const Tensor* g : grads) {
    for (double x : g->data()) ss += x * x;
  }
  return std::sqrt(ss);
}

/// Rescales all gradients by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
inline double clip_grads(std::span<Tensor* const> grads, double max_norm) {
  if (!(max_norm > 0.0)) {
    throw ArgumentError("clip_grads: max_norm must be positive");
  }
  double ss = 0.0;
  for (const Tensor* g : grads) {
    for (double x : g->data()) ss += x * x;
  }
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) {
    throw NumericError("clip_grads: non-finite gradient norm");
  }
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* g : grads) {
      for (double& x : g->data()) x *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Learning-rate schedules.

enum class LrKind { warmup_cosine, constant, cosine };

inline std::string to_string(LrKind k) {
  switch (k) {
    case LrKind::warmup_cosine: return "warmup_cosine";
    case LrKind::constant: return "constant";
    case LrKind::cosine: return "cosine";
  }
  return "?";
}

inline LrKind parse_lr_kind(const std::string& s) {
  if (s == "warmup_cosine") return LrKind::warmup_cosine;
  if (s == "constant") return LrKind::constant;
  if (s == "cosine") return LrKind::cosine;
  throw ArgumentError("unknown lr schedule kind '" + s + "'");
}

struct LrSchedule {
  LrKind kind = LrKind::warmup_cosine;
  double lr_max = 1e-4;
  double lr_min = 1e-5;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  void validate() const {
    if (!(lr_max >= 0.0) || !(lr_min >= 0.0) || lr_min > lr_max) {
      throw ConfigError("lr schedule: need 0 <= lr_min <= lr_max");
    }
    if (warmup_steps < 0 || total_steps < 1 || warmup_steps > total_steps) {
      throw ConfigError("lr schedule: need 0 <= warmup_steps <= total_steps and total_steps >= 1");
    }
    if (kind == LrKind::cosine && warmup_steps != 0) {
      throw ConfigError("lr schedule: kind 'cosine' has no warmup; use 'warmup_cosine'");
    }
  }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// Learning rate after `step` updates. warmup_cosine rises linearly from 0 to
/// lr_max over warmup_steps, then follows a half cosine down to lr_min at
/// total_steps. cosine is the same without warmup; constant returns lr_max.
inline double lr_at(std::int64_t step, const LrSchedule& s) {
  if (step < 0 || step > s.total_steps) {
    throw ArgumentError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) +
                        "]");
  }
  if (s.kind == LrKind::constant) {
    return s.lr_max;
  }
  const std::int64_t warm = s.kind == LrKind::warmup_cosine ? s.warmup_steps : 0;
  if (step < warm) {
    return s.lr_max * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (s.total_steps == warm) {
    return s.lr_max;
  }
  const double progress = static_cast<double>(step - warm) / static_cast<double>(s.total_steps - warm);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

inline void to_json(json& j, const LrSchedule& s) {
  j = {{"kind", to_string(s.kind)},
       {"lr_max", s.lr_max},
       {"lr_min", s.lr_min},
       {"warmup_steps", s.warmup_steps},
       {"total_steps", s.total_steps}};
}

inline LrSchedule lr_schedule_from_json(const json& j, const std::string& path) {
  LrSchedule s;
  JsonReader r(j, path);
  std::string kind = to_string(s.kind);
  r.get("kind", kind, true);
  try {
    s.kind = parse_lr_kind(kind);
  } catch (const ArgumentError& e) {
    throw ConfigError(path + ".kind: " + e.what());
  }
  r.get("lr_max", s.lr_max, true);
  s.lr_min = s.kind == LrKind::constant ? s.lr_max : s.lr_min;
  r.get("lr_min", s.lr_min, s.kind != LrKind::constant);
  r.get("warmup_steps", s.warmup_steps);
  r.get("total_steps", s.total_steps, true);
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

}  // namespace trainlab
