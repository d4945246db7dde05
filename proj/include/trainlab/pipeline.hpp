// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "trainlab/errors.hpp"
#include "trainlab/json_util.hpp"

namespace trainlab {

/// Exact non-negative fraction, always reduced.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d) : num(n), den(d) {
    if (d == 0) {
      throw ArgumentError("rational with zero denominator");
    }
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  friend bool operator==(const Rational&, const Rational&) = default;
};

inline void check_pipeline_dims(std::int64_t p, std::int64_t v, std::int64_t n) {
  if (p < 1 || v < 1 || n < 1) {
    throw ArgumentError("pipeline dims must be >= 1 (p=" + std::to_string(p) + ", v=" + std::to_string(v) +
                        ", n=" + std::to_string(n) + ")");
  }
}

/// (p-1)/(v*n + p-1). v = 1 is plain 1F1B.
inline Rational bubble_ratio_interleaved_exact(std::int64_t p, std::int64_t v, std::int64_t n) {
  check_pipeline_dims(p, v, n);
  return Rational(p - 1, v * n + p - 1);
}

inline Rational bubble_ratio_1f1b_exact(std::int64_t p, std::int64_t n) { return bubble_ratio_interleaved_exact(p, 1, n); }

inline double bubble_ratio_1f1b(std::int64_t p, std::int64_t n) {
  check_pipeline_dims(p, 1, n);
  return static_cast<double>(p - 1) / static_cast<double>(p - 1 + n);
}

inline double bubble_ratio_interleaved(std::int64_t p, std::int64_t v, std::int64_t n) {
  check_pipeline_dims(p, v, n);
  return static_cast<double>(p - 1) / static_cast<double>(v * n + p - 1);
}

// ---------------------------------------------------------------------------
// Event simulation.

/// Virtual stage s = chunk * p + device holds the s-th contiguous slice of the
/// model. Costs are in integer time units, indexed by virtual stage.
struct PipelineSpec {
  std::int64_t p = 1;
  std::int64_t v = 1;
  std::int64_t n = 1;
  std::vector<std::int64_t> fwd_cost;
  std::vector<std::int64_t> bwd_cost;

  /// Every virtual stage costs 1 forward and 2 backward.
  static PipelineSpec uniform(std::int64_t p, std::int64_t v, std::int64_t n, std::int64_t fwd = 1,
                              std::int64_t bwd = 2) {
    check_pipeline_dims(p, v, n);
    PipelineSpec s{p, v, n, {}, {}};
    s.fwd_cost.assign(static_cast<std::size_t>(p * v), fwd);
    s.bwd_cost.assign(static_cast<std::size_t>(p * v), bwd);
    return s;
  }

  std::int64_t stages() const { return p * v; }

  void validate() const {
    check_pipeline_dims(p, v, n);
    const auto k = static_cast<std::size_t>(stages());
    if (fwd_cost.size() != k || bwd_cost.size() != k) {
      throw ArgumentError("pipeline spec needs " + std::to_string(k) + " forward and backward costs, got " +
                          std::to_string(fwd_cost.size()) + " and " + std::to_string(bwd_cost.size()));
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (fwd_cost[i] <= 0 || bwd_cost[i] <= 0) {
        throw ArgumentError("stage costs must be positive (virtual stage " + std::to_string(i) + ")");
      }
    }
  }
};

enum class EventKind { fwd, bwd, idle };

inline std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::fwd: return "fwd";
    case EventKind::bwd: return "bwd";
    case EventKind::idle: return "idle";
  }
  return "?";
}

struct ScheduleEvent {
  EventKind kind = EventKind::idle;
  std::int64_t micro = -1;
  std::int64_t stage = -1;  // virtual stage, -1 for idle
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct ScheduleTimeline {
  std::vector<std::vector<ScheduleEvent>> devices;
  std::int64_t makespan = 0;
  std::int64_t busy = 0;  // summed over devices
  Rational idle_fraction;
};

namespace detail {

struct PipeOp {
  EventKind kind;
  std::int64_t micro;
  std::int64_t chunk;
};

/// Standard warmup depth: p-d-1 forwards for 1F1B, 2(p-d-1) + (v-1)p for the
/// interleaved schedule.
inline std::int64_t default_warmup(std::int64_t d, std::int64_t p, std::int64_t v, std::int64_t n) {
  const std::int64_t w = v == 1 ? p - d - 1 : (p - d - 1) * 2 + (v - 1) * p;
  return std::min(w, n * v);
}

/// Per-device op order: `warmup` forwards, then alternating forward and
/// backward, then the remaining backwards. Plain 1F1B for v = 1; for v > 1
/// micro-batches go in groups of p, all chunks of a group before the next
/// group, with backward chunks reversed. The last group may be partial.
inline std::vector<PipeOp> device_order(std::int64_t p, std::int64_t v, std::int64_t n, std::int64_t warmup) {
  std::vector<PipeOp> fwd, bwd;
  for (std::int64_t g = 0; g < n; g += p) {
    const std::int64_t hi = std::min(g + p, n);
    for (std::int64_t c = 0; c < v; ++c) {
      for (std::int64_t m = g; m < hi; ++m) {
        fwd.push_back({EventKind::fwd, m, c});
        bwd.push_back({EventKind::bwd, m, v - 1 - c});
      }
    }
  }
  std::vector<PipeOp> order;
  order.reserve(fwd.size() * 2);
  std::size_t fi = 0, bi = 0;
  for (std::int64_t i = 0; i < warmup; ++i) order.push_back(fwd[fi++]);
  while (fi < fwd.size()) {
    order.push_back(fwd[fi++]);
    order.push_back(bwd[bi++]);
  }
  while (bi < bwd.size()) order.push_back(bwd[bi++]);
  return order;
}

/// One simulation pass. Returns false and the devices blocked on a backward
/// when the op lists deadlock.
inline bool try_simulate(const PipelineSpec& spec, const std::vector<std::int64_t>& warmup, ScheduleTimeline& tl,
                         std::vector<std::size_t>& blocked) {
  const std::int64_t p = spec.p, v = spec.v, n = spec.n, k = spec.stages();
  const auto idx = [&](std::int64_t m, std::int64_t s) { return static_cast<std::size_t>(m * k + s); };
  constexpr std::int64_t kPending = -1;
  std::vector<std::int64_t> fwd_end(static_cast<std::size_t>(n * k), kPending);
  std::vector<std::int64_t> bwd_end(static_cast<std::size_t>(n * k), kPending);

  std::vector<std::vector<PipeOp>> orders;
  for (std::int64_t d = 0; d < p; ++d) orders.push_back(device_order(p, v, n, warmup[static_cast<std::size_t>(d)]));
  std::vector<std::size_t> next(static_cast<std::size_t>(p), 0);
  std::vector<std::int64_t> free_at(static_cast<std::size_t>(p), 0);

  tl = ScheduleTimeline{};
  tl.devices.resize(static_cast<std::size_t>(p));
  std::size_t remaining = 0;
  for (const auto& o : orders) remaining += o.size();

  while (remaining > 0) {
    bool progressed = false;
    for (std::int64_t d = 0; d < p; ++d) {
      const auto du = static_cast<std::size_t>(d);
      while (next[du] < orders[du].size()) {
        const PipeOp& op = orders[du][next[du]];
        const std::int64_t s = op.chunk * p + d;
        std::int64_t ready = 0;
        if (op.kind == EventKind::fwd) {
          if (s > 0) ready = fwd_end[idx(op.micro, s - 1)];
        } else {
          ready = s + 1 < k ? bwd_end[idx(op.micro, s + 1)] : fwd_end[idx(op.micro, s)];
        }
        if (ready == kPending) break;
        const std::int64_t start = std::max(ready, free_at[du]);
        const std::int64_t cost = op.kind == EventKind::fwd ? spec.fwd_cost[static_cast<std::size_t>(s)]
                                                            : spec.bwd_cost[static_cast<std::size_t>(s)];
        auto& events = tl.devices[du];
        if (start > free_at[du]) events.push_back({EventKind::idle, -1, -1, free_at[du], start});
        events.push_back({op.kind, op.micro, s, start, start + cost});
        free_at[du] = start + cost;
        (op.kind == EventKind::fwd ? fwd_end : bwd_end)[idx(op.micro, s)] = start + cost;
        tl.busy += cost;
        ++next[du];
        --remaining;
        progressed = true;
      }
    }
    if (!progressed) {
      blocked.clear();
      for (std::size_t d = 0; d < orders.size(); ++d) {
        if (next[d] < orders[d].size() && orders[d][next[d]].kind == EventKind::bwd) blocked.push_back(d);
      }
      return false;
    }
  }
  tl.makespan = *std::max_element(free_at.begin(), free_at.end());
  for (std::int64_t d = 0; d < p; ++d) {
    auto& events = tl.devices[static_cast<std::size_t>(d)];
    if (free_at[static_cast<std::size_t>(d)] < tl.makespan) {
      events.push_back({EventKind::idle, -1, -1, free_at[static_cast<std::size_t>(d)], tl.makespan});
    }
  }
  tl.idle_fraction = Rational(p * tl.makespan - tl.busy, p * tl.makespan);
  return true;
}

}  // namespace detail

/// Runs every device's op list in order; each op starts as soon as its device
/// is free and its producer (previous virtual stage forward, next virtual
/// stage backward) has finished. If the standard warmup deadlocks (possible
/// when n is not a multiple of p), devices stuck on a backward get one more
/// warmup forward until the lists run through.
inline ScheduleTimeline simulate_schedule(const PipelineSpec& spec) {
  spec.validate();
  std::vector<std::int64_t> warmup;
  for (std::int64_t d = 0; d < spec.p; ++d) warmup.push_back(detail::default_warmup(d, spec.p, spec.v, spec.n));
  ScheduleTimeline tl;
  std::vector<std::size_t> blocked;
  while (!detail::try_simulate(spec, warmup, tl, blocked)) {
    bool grew = false;
    for (std::size_t d : blocked) {
      if (warmup[d] < spec.n * spec.v) {
        ++warmup[d];
        grew = true;
      }
    }
    if (!grew) {
      throw Error("simulate_schedule: dependency deadlock (p=" + std::to_string(spec.p) + ", v=" +
                  std::to_string(spec.v) + ", n=" + std::to_string(spec.n) + ")");
    }
  }
  return tl;
}

/// Problems found in a timeline: overlaps, missing or duplicate events, and
/// dependency violations. Empty when the timeline is valid.
inline std::vector<std::string> validate_timeline(const PipelineSpec& spec, const ScheduleTimeline& tl) {
  std::vector<std::string> issues;
  const std::int64_t k = spec.stages();
  std::vector<std::int64_t> f_end(static_cast<std::size_t>(spec.n * k), -1), b_end = f_end;
  std::vector<std::int64_t> f_start = f_end, b_start = f_end;
  std::vector<int> f_seen(f_end.size(), 0), b_seen(f_end.size(), 0);
  for (std::size_t d = 0; d < tl.devices.size(); ++d) {
    std::int64_t last = 0;
    for (const auto& e : tl.devices[d]) {
      if (e.start < last) issues.push_back("device " + std::to_string(d) + " overlaps at t=" + std::to_string(e.start));
      last = e.end;
      if (e.kind == EventKind::idle) continue;
      if (e.stage % spec.p != static_cast<std::int64_t>(d)) {
        issues.push_back("stage " + std::to_string(e.stage) + " ran on device " + std::to_string(d));
      }
      const auto i = static_cast<std::size_t>(e.micro * k + e.stage);
      auto& seen = e.kind == EventKind::fwd ? f_seen : b_seen;
      ++seen[i];
      (e.kind == EventKind::fwd ? f_start : b_start)[i] = e.start;
      (e.kind == EventKind::fwd ? f_end : b_end)[i] = e.end;
    }
  }
  for (std::int64_t m = 0; m < spec.n; ++m) {
    for (std::int64_t s = 0; s < k; ++s) {
      const auto i = static_cast<std::size_t>(m * k + s);
      const std::string tag = "(m=" + std::to_string(m) + ", s=" + std::to_string(s) + ")";
      if (f_seen[i] != 1 || b_seen[i] != 1) {
        issues.push_back("event count wrong for " + tag);
        continue;
      }
      if (s > 0 && f_start[i] < f_end[i - 1]) issues.push_back("forward dependency violated at " + tag);
      if (s + 1 < k && b_start[i] < b_end[i + 1]) issues.push_back("backward dependency violated at " + tag);
      if (s + 1 == k && b_start[i] < f_end[i]) issues.push_back("turnaround violated at " + tag);
    }
  }
  return issues;
}

/// {"p", "v", "n", "fwd_cost", "bwd_cost"}; costs are a scalar (uniform) or
/// one entry per virtual stage. bwd_cost defaults to twice fwd_cost.
inline PipelineSpec pipeline_spec_from_json(const json& j, const std::string& path = "pipeline") {
  JsonReader r(j, path);
  PipelineSpec s;
  r.get("p", s.p, true);
  r.get("v", s.v);
  r.get("n", s.n, true);
  auto costs = [&](const char* key, std::vector<std::int64_t>& out) {
    if (!r.has(key)) return;
    const json& c = r.child(key);
    if (c.is_number_integer()) {
      out.assign(static_cast<std::size_t>(std::max<std::int64_t>(s.p * s.v, 0)), c.get<std::int64_t>());
    } else if (c.is_array() && std::all_of(c.begin(), c.end(), [](const json& e) { return e.is_number_integer(); })) {
      out = c.get<std::vector<std::int64_t>>();
    } else {
      throw ConfigError(r.child_path(key) + ": expected an integer or an array of integers");
    }
  };
  costs("fwd_cost", s.fwd_cost);
  costs("bwd_cost", s.bwd_cost);
  r.finish();
  try {
    check_pipeline_dims(s.p, s.v, s.n);
  } catch (const ArgumentError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (s.fwd_cost.empty()) s.fwd_cost.assign(static_cast<std::size_t>(s.p * s.v), 1);
  if (s.bwd_cost.empty()) {
    for (std::int64_t c : s.fwd_cost) s.bwd_cost.push_back(2 * c);
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

inline json timeline_to_json(const ScheduleTimeline& tl) {
  json devices = json::array();
  for (const auto& events : tl.devices) {
    json ev = json::array();
    for (const auto& e : events) {
      ev.push_back({{"kind", to_string(e.kind)}, {"micro", e.micro}, {"stage", e.stage}, {"start", e.start},
                    {"end", e.end}});
    }
    devices.push_back(std::move(ev));
  }
  return devices;
}

// ---------------------------------------------------------------------------
// Stage balancing.

struct StageAssignment {
  std::vector<std::size_t> group_sizes;  // layers per virtual stage, in order
  std::vector<std::int64_t> group_costs;
  std::int64_t max_cost = 0;
  Rational idle_fraction;  // simulated with backward = 2x forward
};

/// Contiguous split of layers into p*v groups minimizing the largest group
/// cost (exact DP). Among optimal splits the one with the earliest cuts is
/// returned.
inline StageAssignment balance_stages(const std::vector<std::int64_t>& layer_costs, std::int64_t p, std::int64_t v,
                                      std::int64_t n = 1) {
  check_pipeline_dims(p, v, n);
  const auto k = static_cast<std::size_t>(p * v);
  const std::size_t L = layer_costs.size();
  if (L < k) {
    throw ArgumentError("balance_stages: " + std::to_string(L) + " layers cannot fill " + std::to_string(k) +
                        " stages");
  }
  if (L > 4096) {
    throw ArgumentError("balance_stages: at most 4096 layers supported");
  }
  for (std::int64_t c : layer_costs) {
    if (c <= 0) throw ArgumentError("balance_stages: layer costs must be positive");
  }
  std::vector<std::int64_t> pre(L + 1, 0);
  for (std::size_t i = 0; i < L; ++i) pre[i + 1] = pre[i] + layer_costs[i];

  // best[g][i]: minimal max cost splitting the suffix starting at layer i into g groups.
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
  std::vector<std::vector<std::int64_t>> best(k + 1, std::vector<std::int64_t>(L + 1, kInf));
  best[0][L] = 0;
  for (std::size_t g = 1; g <= k; ++g) {
    for (std::size_t i = 0; i + g <= L; ++i) {
      std::int64_t b = kInf;
      for (std::size_t j = i + 1; j + (g - 1) <= L; ++j) {
        if (best[g - 1][j] == kInf) continue;
        const std::int64_t cand = std::max(pre[j] - pre[i], best[g - 1][j]);
        b = std::min(b, cand);
        if (pre[j] - pre[i] >= b) break;
      }
      best[g][i] = b;
    }
  }
  StageAssignment out;
  out.max_cost = best[k][0];
  std::size_t i = 0;
  for (std::size_t g = k; g >= 1; --g) {
    std::size_t j = i + 1;
    while (!(best[g - 1][j] != kInf && std::max(pre[j] - pre[i], best[g - 1][j]) <= out.max_cost)) ++j;
    out.group_sizes.push_back(j - i);
    out.group_costs.push_back(pre[j] - pre[i]);
    i = j;
  }
  PipelineSpec spec{p, v, n, out.group_costs, {}};
  for (std::int64_t c : out.group_costs) spec.bwd_cost.push_back(2 * c);
  out.idle_fraction = simulate_schedule(spec).idle_fraction;
  return out;
}

}  // namespace trainlab
