// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trainlab/data.hpp"
#include "trainlab/model.hpp"
#include "trainlab/trainer.hpp"

namespace trainlab {

/// Maps a prompt (haystack ending in [QUERY, key]) to the predicted next token.
using NiahPredictor = std::function<int(std::span<const int>)>;

/// Greedy next-token prediction of a model over a single-document prompt.
inline int predict_next(const Model& model, std::span<const int> prompt) {
  const CompressedMask mask = CompressedMask::causal(prompt.size());
  const Tensor h = final_hidden(model, prompt, mask);
  const std::size_t d = model.config.d_model;
  const std::size_t vocab = model.config.vocab_size;
  const double* last = h.ptr() + (prompt.size() - 1) * d;
  int best = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < vocab; ++v) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += last[c] * model.lm_head.ptr()[c * vocab + v];
    if (s > best_logit) {
      best_logit = s;
      best = static_cast<int>(v);
    }
  }
  return best;
}

inline const std::vector<double>& default_niah_depths() {
  static const std::vector<double> depths{0.0, 0.25, 0.5, 0.75, 1.0};
  return depths;
}

struct NiahDepthResult {
  double depth = 0.0;
  std::size_t cases = 0;
  std::size_t correct = 0;
};

struct NiahResult {
  std::size_t context_len = 0;
  std::size_t cases = 0;
  std::size_t correct = 0;
  std::vector<NiahDepthResult> by_depth;

  double accuracy() const { return cases == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(cases); }
};

/// n_cases haystacks per depth, depth-major, from a generator seeded with `seed`.
inline std::vector<NiahCase> make_niah_cases(const NiahTaskSpec& task, std::size_t context_len, std::size_t n_cases,
                                             const std::vector<double>& depths, std::uint64_t seed) {
  task.validate();
  if (n_cases == 0) throw ArgumentError("niah: n_cases must be positive");
  if (depths.empty()) throw ArgumentError("niah: at least one depth is required");
  std::mt19937_64 rng(seed);
  std::vector<NiahCase> out;
  out.reserve(n_cases * depths.size());
  for (double depth : depths) {
    for (std::size_t i = 0; i < n_cases; ++i) out.push_back(make_niah_case(task, context_len, depth, rng));
  }
  return out;
}

inline NiahResult niah_probe(const NiahPredictor& predict, const NiahTaskSpec& task, std::size_t context_len,
                             std::size_t n_cases, const std::vector<double>& depths, std::uint64_t seed) {
  const auto cases = make_niah_cases(task, context_len, n_cases, depths, seed);
  NiahResult r;
  r.context_len = context_len;
  for (double depth : depths) r.by_depth.push_back({depth, 0, 0});
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const bool hit = predict(cases[i].tokens) == cases[i].answer;
    auto& bucket = r.by_depth[i / n_cases];
    ++bucket.cases;
    ++r.cases;
    if (hit) {
      ++bucket.correct;
      ++r.correct;
    }
  }
  return r;
}

/// Exact-match retrieval accuracy of a model at `context_len`.
inline NiahResult niah_probe(const Model& model, const NiahTaskSpec& task, std::size_t context_len,
                             std::size_t n_cases, const std::vector<double>& depths = default_niah_depths(),
                             std::uint64_t seed = 1) {
  if (context_len > model.config.max_seq_len) {
    throw ArgumentError("niah: context_len " + std::to_string(context_len) + " exceeds model max_seq_len " +
                        std::to_string(model.config.max_seq_len));
  }
  if (task.vocab_size > model.config.vocab_size) {
    throw ArgumentError("niah: task vocab " + std::to_string(task.vocab_size) + " exceeds model vocab " +
                        std::to_string(model.config.vocab_size));
  }
  return niah_probe([&](std::span<const int> p) { return predict_next(model, p); }, task, context_len, n_cases,
                    depths, seed);
}

inline json niah_result_to_json(const NiahResult& r) {
  json depths = json::array();
  for (const auto& d : r.by_depth) {
    depths.push_back({{"depth", d.depth}, {"cases", d.cases}, {"correct", d.correct}});
  }
  return json{{"context_len", r.context_len},
              {"cases", r.cases},
              {"correct", r.correct},
              {"accuracy", r.accuracy()},
              {"by_depth", depths}};
}

// ---------------------------------------------------------------------------
// RoPE base selection: evaluate every candidate base at the target length and
// keep the best one. Ties go to the earlier candidate.

struct RopeBaseTrial {
  double rope_base = 0.0;
  NiahResult result;
};

struct RopeBaseSweep {
  std::vector<RopeBaseTrial> trials;
  std::size_t selected = 0;

  double selected_base() const { return trials.at(selected).rope_base; }
};

/// `prepare(base)` returns the model to evaluate for that base, e.g. the
/// trained model with its base swapped, or a copy trained further with it.
inline RopeBaseSweep select_rope_base(const std::function<Model(double)>& prepare, const std::vector<double>& bases,
                                      const NiahTaskSpec& task, std::size_t context_len, std::size_t n_cases,
                                      const std::vector<double>& depths, std::uint64_t seed) {
  if (bases.empty()) throw ArgumentError("select_rope_base: no candidate bases");
  RopeBaseSweep sweep;
  for (double base : bases) {
    if (!(base > 0.0)) throw ArgumentError("select_rope_base: bases must be positive");
    const Model m = prepare(base);
    sweep.trials.push_back({base, niah_probe(m, task, context_len, n_cases, depths, seed)});
    if (sweep.trials.back().result.correct > sweep.trials[sweep.selected].result.correct) {
      sweep.selected = sweep.trials.size() - 1;
    }
  }
  return sweep;
}

/// Swaps the RoPE base of a trained model without further training.
inline std::function<Model(double)> with_rope_base(const Model& model) {
  return [&model](double base) {
    Model m = model;
    m.config.rope_base = base;
    return m;
  };
}

inline json rope_sweep_to_json(const RopeBaseSweep& s) {
  json trials = json::array();
  for (const auto& t : s.trials) {
    trials.push_back({{"rope_base", t.rope_base}, {"accuracy", t.result.accuracy()}, {"correct", t.result.correct},
                      {"cases", t.result.cases}});
  }
  return json{{"trials", trials}, {"selected_rope_base", s.selected_base()}};
}

// ---------------------------------------------------------------------------
// Training on the retrieval task.

/// One stage of retrieval training; stages run in order and the last one
/// sets the trained length.
struct NiahStage {
  std::size_t seq_len = 256;
  std::size_t rows = 4;
  std::int64_t steps = 500;
};

inline ModelConfig niah_model_config() {
  ModelConfig m;
  m.layers = 2;
  m.d_model = 64;
  m.n_q_heads = 2;
  m.n_kv_heads = 2;
  m.ffn_inner = 128;
  m.max_seq_len = 1024;
  return m;
}

inline NiahTaskSpec niah_train_task() {
  NiahTaskSpec t;
  t.train_pairs = 6;
  return t;
}

struct NiahTrainConfig {
  ModelConfig model = niah_model_config();
  NiahTaskSpec task = niah_train_task();
  std::vector<NiahStage> stages{{64, 16, 1000}, {256, 4, 500}};
  double lr_max = 3e-3;
  double lr_min = 3e-4;
  std::int64_t warmup_steps = 50;
  OptimHyper optim{0.9, 0.95, 1e-8, 0.0, 1.0};
  std::uint64_t seed = 1;

  std::size_t trained_len() const { return stages.back().seq_len; }
};

/// Warmup in the first stage only; each stage decays lr_max to lr_min.
inline PhasePlan niah_phase_plan(const NiahTrainConfig& c) {
  if (c.stages.empty()) throw ConfigError("niah training needs at least one stage");
  PhasePlan plan;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const NiahStage& st = c.stages[i];
    Phase p;
    p.name = "retrieval-" + std::to_string(st.seq_len);
    p.seq_len = st.seq_len;
    p.rope_base = c.model.rope_base;
    p.token_budget = static_cast<std::uint64_t>(st.steps) * st.rows * st.seq_len;
    p.batch_ramp = {{0, st.rows}};
    p.schedule = {LrKind::warmup_cosine, c.lr_max, c.lr_min, i == 0 ? std::min(c.warmup_steps, st.steps) : 0,
                  st.steps};
    plan.phases.push_back(p);
  }
  return plan;
}

inline Model train_niah_model(const NiahTrainConfig& c, RunLog* log = nullptr, const StepObserver& on_step = {}) {
  Model m = build_model(c.model, c.seed);
  NiahTaskSpec task = c.task;
  task.seed = c.seed ^ 0x9e3779b97f4a7c15ULL;
  NiahTrainSource data(task);
  RunLog l = run_phase_plan(niah_phase_plan(c), m, data, TrainOptions{c.optim, on_step});
  if (l.status != "completed") throw NumericError("niah training stopped: " + l.message);
  if (log != nullptr) *log = std::move(l);
  return m;
}

}  // namespace trainlab
