// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "trainlab/data.hpp"
#include "trainlab/model.hpp"
#include "trainlab/optim.hpp"
#include "trainlab/spike.hpp"

namespace trainlab {

/// From `threshold` tokens into the phase onward, steps use `batch_size` rows.
struct BatchRampEntry {
  std::uint64_t threshold = 0;
  std::size_t batch_size = 1;

  friend bool operator==(const BatchRampEntry&, const BatchRampEntry&) = default;
};

struct Phase {
  std::string name;
  std::uint64_t token_budget = 0;
  std::size_t seq_len = 0;
  double rope_base = 1e4;
  std::vector<BatchRampEntry> batch_ramp;
  LrSchedule schedule;

  /// Rows per step once `phase_tokens` tokens of this phase have been consumed.
  /// Before the first threshold the first entry applies.
  std::size_t batch_at(std::uint64_t phase_tokens) const {
    std::size_t b = batch_ramp.front().batch_size;
    for (const auto& e : batch_ramp) {
      if (phase_tokens >= e.threshold) b = e.batch_size;
    }
    return b;
  }

  void validate() const {
    const std::string where = "phase '" + name + "'";
    if (token_budget == 0) throw ConfigError(where + ": token_budget must be positive");
    if (seq_len == 0) throw ConfigError(where + ": seq_len must be positive");
    if (!(rope_base > 0.0)) throw ConfigError(where + ": rope_base must be positive");
    if (batch_ramp.empty()) throw ConfigError(where + ": batch_ramp needs at least one entry");
    for (std::size_t i = 0; i < batch_ramp.size(); ++i) {
      if (batch_ramp[i].batch_size == 0) throw ConfigError(where + ": batch sizes must be positive");
      if (i > 0 && batch_ramp[i].threshold <= batch_ramp[i - 1].threshold) {
        throw ConfigError(where + ": batch_ramp thresholds must be strictly increasing");
      }
    }
    schedule.validate();
  }

  friend bool operator==(const Phase&, const Phase&) = default;
};

/// Number of optimizer steps a phase takes to consume its token budget.
inline std::int64_t count_phase_steps(const Phase& p) {
  std::uint64_t seen = 0;
  std::int64_t steps = 0;
  std::size_t next = 1;
  while (seen < p.token_budget) {
    const std::uint64_t per_step = static_cast<std::uint64_t>(p.batch_at(seen)) * p.seq_len;
    // Advance to the next ramp threshold or the end of the budget in one go.
    while (next < p.batch_ramp.size() && p.batch_ramp[next].threshold <= seen) ++next;
    const std::uint64_t stop = next < p.batch_ramp.size() ? std::min(p.batch_ramp[next].threshold, p.token_budget)
                                                          : p.token_budget;
    const std::uint64_t k = (stop - seen + per_step - 1) / per_step;
    seen += k * per_step;
    steps += static_cast<std::int64_t>(k);
  }
  return steps;
}

struct PhasePlan {
  std::vector<Phase> phases;

  void validate() const {
    if (phases.empty()) throw ConfigError("plan needs at least one phase");
    for (const auto& p : phases) p.validate();
  }

  /// The staged pre-training and long-context plan at full scale: 4K context
  /// to 12.8T tokens, then 8K, 32K and 128K extension phases.
  static PhasePlan reference() {
    constexpr std::uint64_t T = 1'000'000'000'000ULL;
    PhasePlan plan;
    Phase general;
    general.name = "general-4k";
    general.token_budget = 74 * T / 10;
    general.seq_len = 4096;
    general.rope_base = 1e4;
    general.batch_ramp = {{0, 1024}, {12 * T / 10, 1536}, {19 * T / 10, 2048}};
    general.schedule = {LrKind::warmup_cosine, 1e-4, 1e-5, 4000, 0};
    general.schedule.total_steps = count_phase_steps(general);
    plan.phases.push_back(general);

    Phase constant;
    constant.name = "general-4k-constant";
    constant.token_budget = 46 * T / 10;
    constant.seq_len = 4096;
    constant.rope_base = 1e4;
    constant.batch_ramp = {{0, 2048}};
    constant.schedule = {LrKind::constant, 1e-5, 1e-5, 0, 0};
    constant.schedule.total_steps = count_phase_steps(constant);
    plan.phases.push_back(constant);

    Phase anneal;
    anneal.name = "anneal-8k";
    anneal.token_budget = 8 * T / 10;
    anneal.seq_len = 8192;
    anneal.rope_base = 1e5;
    anneal.batch_ramp = {{0, 1536}};
    anneal.schedule = {LrKind::cosine, 1e-5, 7.5e-6, 0, 0};
    anneal.schedule.total_steps = count_phase_steps(anneal);
    plan.phases.push_back(anneal);

    Phase ctx32;
    ctx32.name = "long-32k";
    ctx32.token_budget = 2 * T / 10;
    ctx32.seq_len = 32768;
    ctx32.rope_base = 1.6e6;
    ctx32.batch_ramp = {{0, 384}};
    ctx32.schedule = {LrKind::constant, 7.5e-6, 7.5e-6, 0, 0};
    ctx32.schedule.total_steps = count_phase_steps(ctx32);
    plan.phases.push_back(ctx32);

    Phase ctx128 = ctx32;
    ctx128.name = "long-128k";
    ctx128.seq_len = 131072;
    ctx128.rope_base = 2.56e7;
    ctx128.batch_ramp = {{0, 96}};
    ctx128.schedule.total_steps = count_phase_steps(ctx128);
    plan.phases.push_back(ctx128);
    return plan;
  }

  friend bool operator==(const PhasePlan&, const PhasePlan&) = default;
};

inline void to_json(json& j, const Phase& p) {
  json ramp = json::array();
  for (const auto& e : p.batch_ramp) ramp.push_back({e.threshold, e.batch_size});
  j = {{"name", p.name},           {"token_budget", p.token_budget}, {"seq_len", p.seq_len},
       {"rope_base", p.rope_base}, {"batch_ramp", ramp},             {"schedule", p.schedule}};
}

inline void to_json(json& j, const PhasePlan& p) { j = {{"phases", p.phases}}; }

/// schedule.total_steps may be omitted; it is then derived from the budget.
inline Phase phase_from_json(const json& j, const std::string& path) {
  Phase p;
  JsonReader r(j, path);
  r.get("name", p.name);
  r.get("token_budget", p.token_budget, true);
  r.get("seq_len", p.seq_len, true);
  r.get("rope_base", p.rope_base);
  const json& ramp = r.child("batch_ramp");
  if (!ramp.is_array()) throw ConfigError(r.child_path("batch_ramp") + ": expected [[threshold, batch], ...]");
  for (std::size_t i = 0; i < ramp.size(); ++i) {
    const json& e = ramp[i];
    const std::string ep = r.child_path("batch_ramp") + "[" + std::to_string(i) + "]";
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned()) {
      throw ConfigError(ep + ": expected [threshold_tokens, batch_size]");
    }
    p.batch_ramp.push_back({e[0].get<std::uint64_t>(), e[1].get<std::size_t>()});
  }
  json sched = r.child("schedule");
  const std::string sp = r.child_path("schedule");
  const bool auto_total = sched.is_object() && !sched.contains("total_steps");
  if (auto_total) sched["total_steps"] = 1;
  if (auto_total && sched.contains("warmup_steps")) sched["total_steps"] = sched["warmup_steps"];
  p.schedule = lr_schedule_from_json(sched, sp);
  r.finish();
  if (auto_total && !p.batch_ramp.empty() && p.seq_len > 0 && p.token_budget > 0) {
    p.schedule.total_steps = std::max<std::int64_t>(count_phase_steps(p), p.schedule.warmup_steps);
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return p;
}

inline PhasePlan phase_plan_from_json(const json& j, const std::string& path = "plan") {
  PhasePlan plan;
  JsonReader r(j, path);
  const json& phases = r.child("phases");
  if (!phases.is_array()) throw ConfigError(r.child_path("phases") + ": expected an array");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    plan.phases.push_back(phase_from_json(phases[i], r.child_path("phases") + "[" + std::to_string(i) + "]"));
  }
  r.finish();
  if (plan.phases.empty()) throw ConfigError(path + ".phases: needs at least one phase");
  return plan;
}

// ---------------------------------------------------------------------------
// Run log.

struct StepRecord {
  std::int64_t step = 0;  // global, 0-based
  std::size_t phase = 0;
  std::uint64_t tokens_seen = 0;  // after this step
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  double rope_base = 0.0;
};

/// Non-finite numbers are written as null.
inline void to_json(json& j, const StepRecord& s) {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  j = json::object();
  j["step"] = s.step;
  j["phase"] = s.phase;
  j["tokens_seen"] = s.tokens_seen;
  j["loss"] = num(s.loss);
  j["grad_norm"] = num(s.grad_norm);
  j["lr"] = s.lr;
  j["batch_size"] = s.batch_size;
  j["seq_len"] = s.seq_len;
  j["rope_base"] = s.rope_base;
}

inline StepRecord step_record_from_json(const json& j) {
  auto num = [&](const char* k) {
    return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
  };
  StepRecord s;
  s.step = j.at("step").get<std::int64_t>();
  s.phase = j.at("phase").get<std::size_t>();
  s.tokens_seen = j.at("tokens_seen").get<std::uint64_t>();
  s.loss = num("loss");
  s.grad_norm = num("grad_norm");
  s.lr = j.at("lr").get<double>();
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.seq_len = j.at("seq_len").get<std::size_t>();
  s.rope_base = j.at("rope_base").get<double>();
  return s;
}

struct RunLog {
  std::vector<StepRecord> steps;
  std::string status = "completed";  // completed | data_exhausted | diverged | stopped
  std::string message;

  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& s : steps) out.push_back(s.loss);
    return out;
  }

  std::vector<double> grad_norms() const {
    std::vector<double> out;
    for (const auto& s : steps) out.push_back(s.grad_norm);
    return out;
  }

  /// One JSON object per line in step order.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& s : steps) {
      out += json(s).dump();
      out += '\n';
    }
    return out;
  }

  static RunLog from_jsonl(const std::string& text) {
    RunLog log;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        log.steps.push_back(step_record_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw ConfigError("runlog line " + std::to_string(n) + ": " + e.what());
      }
    }
    return log;
  }
};

// ---------------------------------------------------------------------------
// Training loop.

using StepObserver = std::function<void(const StepRecord&, const Model&)>;

struct TrainOptions {
  OptimHyper optim;
  StepObserver on_step;      // called after every successful update
  std::int64_t max_steps = -1;  // stop early (status "stopped") after this many updates; -1 = no cap
};

/// Mean weighted cross-entropy of one batch and its gradients; gradients are
/// left in `grads` in parameters(model) order.
inline double loss_and_grads(const Model& model, const Batch& batch, std::vector<Tensor>& grads) {
  Tape tape;
  ModelVars vars = bind_parameters(tape, model, true);
  Var logits = model_forward(vars, model.config, batch.tokens, batch.mask, nullptr, batch.positions);
  Var loss = cross_entropy(logits, batch.targets, batch.weights);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss");
  }
  tape.backward(loss);
  grads.clear();
  grads.reserve(vars.all.size());
  for (const Var& v : vars.all) grads.push_back(std::move(tape.grad_slot(v.id())));
  return value;
}

inline double batch_loss(const Model& model, const Batch& batch) {
  Tape tape;
  ModelVars vars = bind_parameters(tape, model, false);
  Var logits = model_forward(vars, model.config, batch.tokens, batch.mask, nullptr, batch.positions);
  return cross_entropy(logits, batch.targets, batch.weights).value().item();
}

/// Runs every phase in order. The phase's seq_len and rope_base are applied
/// to the model at its start; rows per step follow the batch ramp; gradients
/// are clipped after the full batch and then applied with AdamW. The k-th
/// update of a phase uses lr_at(min(k, total_steps)).
inline RunLog run_phase_plan(const PhasePlan& plan, Model& model, DataSource& data, const TrainOptions& opt = {}) {
  plan.validate();
  opt.optim.validate();
  RunLog log;
  AdamWState state;
  std::vector<Tensor> grads;
  std::uint64_t tokens_seen = 0;
  std::int64_t global_step = 0;
  for (std::size_t pi = 0; pi < plan.phases.size(); ++pi) {
    const Phase& phase = plan.phases[pi];
    if (phase.seq_len > model.config.max_seq_len) {
      throw ConfigError("phase '" + phase.name + "' seq_len " + std::to_string(phase.seq_len) +
                        " exceeds model max_seq_len " + std::to_string(model.config.max_seq_len));
    }
    model.config.rope_base = phase.rope_base;
    std::uint64_t phase_tokens = 0;
    std::int64_t k = 0;
    while (phase_tokens < phase.token_budget) {
      if (opt.max_steps >= 0 && global_step >= opt.max_steps) {
        log.status = "stopped";
        log.message = "step cap " + std::to_string(opt.max_steps) + " reached";
        return log;
      }
      const std::size_t rows = phase.batch_at(phase_tokens);
      auto batch = data.next(rows, phase.seq_len);
      if (!batch) {
        log.status = "data_exhausted";
        log.message = "data source exhausted in phase '" + phase.name + "' after " + std::to_string(global_step) +
                      " steps";
        return log;
      }
      ++k;
      StepRecord rec;
      rec.step = global_step;
      rec.phase = pi;
      rec.batch_size = rows;
      rec.seq_len = phase.seq_len;
      rec.rope_base = phase.rope_base;
      rec.lr = lr_at(std::min(k, phase.schedule.total_steps), phase.schedule);
      try {
        rec.loss = loss_and_grads(model, *batch, grads);
        std::vector<Tensor*> gp;
        for (Tensor& g : grads) gp.push_back(&g);
        rec.grad_norm = clip_grads(gp, opt.optim.clip_norm);
        std::vector<Tensor*> pp;
        for (auto& p : parameters(model)) pp.push_back(p.tensor);
        std::vector<const Tensor*> cg(gp.begin(), gp.end());
        adamw_step(pp, cg, state, opt.optim, rec.lr);
      } catch (const NumericError& e) {
        rec.loss = std::numeric_limits<double>::quiet_NaN();
        rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
        rec.tokens_seen = tokens_seen;
        log.steps.push_back(rec);
        log.status = "diverged";
        log.message = "step " + std::to_string(global_step) + ": " + e.what();
        return log;
      }
      const std::uint64_t step_tokens = static_cast<std::uint64_t>(rows) * phase.seq_len;
      phase_tokens += step_tokens;
      tokens_seen += step_tokens;
      rec.tokens_seen = tokens_seen;
      log.steps.push_back(rec);
      if (opt.on_step) opt.on_step(rec, model);
      ++global_step;
    }
  }
  return log;
}

/// Coefficient of variation (population std / mean) of a series.
inline double coefficient_of_variation(const std::vector<double>& xs) {
  if (xs.empty()) throw ArgumentError("coefficient_of_variation: empty series");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return std::sqrt(var) / mean;
}

}  // namespace trainlab
