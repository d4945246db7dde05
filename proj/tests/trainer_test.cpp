// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "trainlab/trainer.hpp"

namespace trainlab {
namespace {

std::vector<Tensor*> ptrs(std::vector<Tensor>& ts) {
  std::vector<Tensor*> out;
  for (auto& t : ts) out.push_back(&t);
  return out;
}

std::vector<const Tensor*> cptrs(const std::vector<Tensor>& ts) {
  std::vector<const Tensor*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

// ---------------------------------------------------------------------------
// AdamW.

TEST(AdamW, ZeroGradientNoDecayLeavesParamsAndDecaysMoments) {
  std::vector<Tensor> p{Tensor({2}, {1.0, -2.0})};
  std::vector<Tensor> g{Tensor({2}, {0.5, 0.25})};
  OptimHyper hp;
  hp.weight_decay = 0.0;
  AdamWState st;
  adamw_step(ptrs(p), cptrs(g), st, hp, 1e-3);
  const Tensor after_first = p[0];
  const Tensor m1 = st.m[0], v1 = st.v[0];
  g[0].fill(0.0);
  adamw_step(ptrs(p), cptrs(g), st, hp, 0.0);
  EXPECT_EQ(p[0], after_first);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(st.m[0][i], 0.9 * m1[i]);
    EXPECT_EQ(st.v[0][i], 0.95 * v1[i]);
  }
}

TEST(AdamW, FirstStepHandEvaluated) {
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  std::vector<Tensor> g{Tensor::scalar(2.0)};
  AdamWState st;
  adamw_step(ptrs(p), cptrs(g), st, OptimHyper{}, 1e-4);
  EXPECT_NEAR(p[0].item(), 0.99989, 1e-9);
  EXPECT_DOUBLE_EQ(p[0].item(), 1.0 - 1e-4 * (2.0 / (2.0 + 1e-8) + 0.1 * 1.0));
}

TEST(AdamW, ConstantGradientStepsAreSignSized) {
  std::vector<Tensor> p{Tensor({3}, {0.3, -0.1, 2.0})};
  std::vector<Tensor> g{Tensor({3}, {0.7, -3.0, 0.5})};
  OptimHyper hp;
  hp.weight_decay = 0.0;
  AdamWState st;
  const double lr = 1e-2;
  for (int s = 0; s < 2; ++s) {
    const Tensor before = p[0];
    adamw_step(ptrs(p), cptrs(g), st, hp, lr);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(p[0][i] - before[i], -lr * (g[0][i] > 0 ? 1.0 : -1.0), 1e-9);
    }
  }
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  std::vector<Tensor> p{Tensor({2}, {1.0, 2.0})};
  std::vector<Tensor> g{Tensor({2}, {0.1, 0.2})};
  AdamWState st;
  adamw_step(ptrs(p), cptrs(g), st, OptimHyper{}, 1e-3);
  const Tensor p1 = p[0], m1 = st.m[0];
  g[0][1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adamw_step(ptrs(p), cptrs(g), st, OptimHyper{}, 1e-3), NumericError);
  EXPECT_EQ(p[0], p1);
  EXPECT_EQ(st.m[0], m1);
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, WithoutDecayMatchesAdamOracle) {
  std::mt19937_64 rng(31);
  OptimHyper hp;
  hp.weight_decay = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = testing::random_size(rng, 1, 40);
    std::vector<Tensor> p{testing::random_tensor({n}, rng)};
    std::vector<double> theta = p[0].to_vector();
    oracle::Adam adam{hp.beta1, hp.beta2, hp.eps, {}, {}};
    AdamWState st;
    for (int s = 0; s < 100; ++s) {
      std::vector<Tensor> g{testing::random_tensor({n}, rng, -2.0, 2.0)};
      const double lr = 1e-3 * (1.0 + s % 7);
      adamw_step(ptrs(p), cptrs(g), st, hp, lr);
      adam.step(theta, g[0].to_vector(), lr);
    }
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[0][i], theta[i], 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Schedules and clipping.

LrSchedule reference_schedule() { return {LrKind::warmup_cosine, 1e-4, 1e-5, 4000, 100000}; }

TEST(LrAt, Examples) {
  const LrSchedule s = reference_schedule();
  EXPECT_DOUBLE_EQ(lr_at(4000, s), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(100000, s), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(0, s), 0.0);
  EXPECT_NEAR(lr_at(4000 + 48000, s), 5.5e-5, 1e-18);
  EXPECT_THROW(lr_at(100001, s), ArgumentError);
  EXPECT_THROW(lr_at(-1, s), ArgumentError);
  EXPECT_EQ(lr_at(17, LrSchedule{LrKind::constant, 1e-5, 1e-5, 0, 50}), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(0, LrSchedule{LrKind::cosine, 1e-5, 7.5e-6, 0, 10}), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(10, LrSchedule{LrKind::cosine, 1e-5, 7.5e-6, 0, 10}), 7.5e-6);
}

TEST(LrAt, ContinuousAtJunctionAndMonotoneAfter) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    LrSchedule s;
    s.total_steps = static_cast<std::int64_t>(testing::random_size(rng, 2, 3000));
    s.warmup_steps = static_cast<std::int64_t>(testing::random_size(rng, 1, static_cast<std::size_t>(s.total_steps) - 1));
    s.lr_max = std::uniform_real_distribution<double>(1e-5, 1e-2)(rng);
    s.lr_min = s.lr_max * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double left = lr_at(s.warmup_steps - 1, s);
    const double at = lr_at(s.warmup_steps, s);
    EXPECT_LE(std::abs(at - left), s.lr_max / static_cast<double>(s.warmup_steps) + 1e-18);
    EXPECT_DOUBLE_EQ(at, s.lr_max);
    double prev = at;
    for (std::int64_t k = s.warmup_steps + 1; k <= s.total_steps; ++k) {
      const double cur = lr_at(k, s);
      ASSERT_LE(cur, prev);
      prev = cur;
    }
  }
}

TEST(ClipGrads, Examples) {
  std::vector<Tensor> g{Tensor({2}, {3.0, 4.0})};
  EXPECT_DOUBLE_EQ(clip_grads(ptrs(g), 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[0][1], 0.8, 1e-15);
  std::vector<Tensor> small{Tensor({2}, {0.3, 0.4})};
  EXPECT_DOUBLE_EQ(clip_grads(ptrs(small), 1.0), 0.5);
  EXPECT_EQ(small[0], Tensor({2}, {0.3, 0.4}));
  std::vector<Tensor> zero{Tensor({3}, 0.0)};
  EXPECT_EQ(clip_grads(ptrs(zero), 1.0), 0.0);
  EXPECT_THROW(clip_grads(ptrs(zero), 0.0), ArgumentError);
  std::vector<Tensor> bad{Tensor({1}, {std::numeric_limits<double>::quiet_NaN()})};
  EXPECT_THROW(clip_grads(ptrs(bad), 1.0), NumericError);
}

TEST(ClipGrads, PostNormIsMinOfPreNormAndMax) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tensor> g;
    const std::size_t k = testing::random_size(rng, 1, 4);
    const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-3, 2)(rng));
    for (std::size_t i = 0; i < k; ++i) g.push_back(testing::random_tensor({testing::random_size(rng, 1, 30)}, rng, -scale, scale));
    const double max_norm = std::uniform_real_distribution<double>(0.1, 3.0)(rng);
    const double pre = clip_grads(ptrs(g), max_norm);
    const double post = global_norm(cptrs(g));
    EXPECT_NEAR(post, std::min(pre, max_norm), 1e-12);
    EXPECT_LE(post, pre + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Spike detection.

TEST(SpikeDetector, Examples) {
  std::vector<double> dec(200);
  for (std::size_t i = 0; i < dec.size(); ++i) dec[i] = 10.0 - 0.01 * static_cast<double>(i);
  EXPECT_TRUE(detect_spikes(dec).empty());
  EXPECT_TRUE(detect_spikes(std::vector<double>(200, 3.0)).empty());

  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<double> flat(300);
  for (double& x : flat) x = 3.0 + noise(rng);
  flat[150] = 4.5;
  const auto ev = detect_spikes(flat);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].step, 150u);
}

TEST(SpikeDetector, ShortSeriesAndNonFinite) {
  EXPECT_TRUE(detect_spikes(std::vector<double>(50, 1.0)).empty());
  std::vector<double> s(60, 1.0);
  s[55] = std::numeric_limits<double>::quiet_NaN();
  const auto ev = detect_spikes(s);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].step, 55u);
  EXPECT_THROW(detect_spikes(s, SpikeDetector{1, 6.0}), ConfigError);
}

// ---------------------------------------------------------------------------
// Phase plans.

TEST(PhasePlan, ReferencePreset) {
  const PhasePlan plan = PhasePlan::reference();
  ASSERT_EQ(plan.phases.size(), 5u);
  const Phase& p0 = plan.phases[0];
  EXPECT_EQ(p0.seq_len, 4096u);
  EXPECT_EQ(p0.rope_base, 1e4);
  EXPECT_EQ(p0.batch_at(0), 1024u);
  EXPECT_EQ(p0.batch_at(1'200'000'000'000ULL), 1536u);
  EXPECT_EQ(p0.batch_at(1'900'000'000'000ULL), 2048u);
  EXPECT_DOUBLE_EQ(lr_at(4000, p0.schedule), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(p0.schedule.total_steps, p0.schedule), 1e-5);
  const std::vector<double> bases{1e4, 1e4, 1e5, 1.6e6, 2.56e7};
  const std::vector<std::size_t> seqs{4096, 4096, 8192, 32768, 131072};
  const std::vector<std::size_t> batches{2048, 2048, 1536, 384, 96};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(plan.phases[i].rope_base, bases[i]);
    EXPECT_EQ(plan.phases[i].seq_len, seqs[i]);
    EXPECT_EQ(plan.phases[i].batch_at(plan.phases[i].token_budget), batches[i]);
  }
  EXPECT_EQ(plan.phases[2].schedule.lr_max, 1e-5);
  EXPECT_EQ(plan.phases[2].schedule.lr_min, 7.5e-6);
  EXPECT_EQ(lr_at(0, plan.phases[4].schedule), 7.5e-6);
  EXPECT_NO_THROW(plan.validate());
}

TEST(PhasePlan, StepCountMatchesSimulation) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Phase p;
    p.name = "t";
    p.seq_len = testing::random_size(rng, 1, 9);
    p.token_budget = testing::random_size(rng, 1, 2000);
    std::uint64_t th = 0;
    const std::size_t entries = testing::random_size(rng, 1, 4);
    for (std::size_t e = 0; e < entries; ++e) {
      p.batch_ramp.push_back({th, testing::random_size(rng, 1, 6)});
      th += testing::random_size(rng, 1, 400);
    }
    std::int64_t steps = 0;
    for (std::uint64_t seen = 0; seen < p.token_budget; ++steps) seen += p.batch_at(seen) * p.seq_len;
    EXPECT_EQ(count_phase_steps(p), steps);
  }
}

TEST(PhasePlan, JsonRoundTripAndAutoTotal) {
  const json j = json::parse(R"({"phases": [{"name": "a", "token_budget": 1000, "seq_len": 10,
      "rope_base": 10000.0, "batch_ramp": [[0, 2], [200, 4]],
      "schedule": {"kind": "warmup_cosine", "lr_max": 0.001, "lr_min": 0.0001, "warmup_steps": 5}}]})");
  const PhasePlan plan = phase_plan_from_json(j);
  EXPECT_EQ(plan.phases[0].schedule.total_steps, count_phase_steps(plan.phases[0]));
  EXPECT_EQ(phase_plan_from_json(json(plan)), plan);
  json bad = j;
  bad["phases"][0]["batch_ramp"] = json::parse("[[100, 2], [50, 4]]");
  EXPECT_THROW(phase_plan_from_json(bad), ConfigError);
  bad = j;
  bad["phases"][0]["schedule"]["kind"] = "linear";
  try {
    phase_plan_from_json(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("plan.phases[0].schedule.kind"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------
// Training loop.

ModelConfig tiny_model() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.n_q_heads = 2;
  c.n_kv_heads = 1;
  c.ffn_inner = 32;
  c.vocab_size = 32;
  return c;
}

MotifCorpusSpec tiny_data() {
  MotifCorpusSpec d;
  d.vocab_size = 32;
  d.min_doc_len = 3;
  d.max_doc_len = 12;
  d.seed = 3;
  return d;
}

Phase simple_phase(std::uint64_t budget, std::size_t seq, std::vector<BatchRampEntry> ramp, double base = 1e4) {
  Phase p;
  p.name = "p";
  p.token_budget = budget;
  p.seq_len = seq;
  p.rope_base = base;
  p.batch_ramp = std::move(ramp);
  p.schedule = {LrKind::warmup_cosine, 1e-2, 1e-3, 2, 0};
  p.schedule.total_steps = count_phase_steps(p);
  return p;
}

TEST(RunPhasePlan, SinglePhaseTenSteps) {
  Model m = build_model(tiny_model(), 1);
  MotifCorpus data(tiny_data());
  PhasePlan plan{{simple_phase(10 * 2 * 8, 8, {{0, 2}})}};
  const RunLog log = run_phase_plan(plan, m, data);
  EXPECT_EQ(log.status, "completed");
  ASSERT_EQ(log.steps.size(), 10u);
  for (const auto& s : log.steps) {
    EXPECT_EQ(s.batch_size, 2u);
    EXPECT_TRUE(std::isfinite(s.loss));
  }
  EXPECT_EQ(log.steps.back().tokens_seen, 160u);
  EXPECT_LT(log.steps.back().loss, log.steps.front().loss);
}

TEST(RunPhasePlan, BatchRampSwitchesAtThresholds) {
  Model m = build_model(tiny_model(), 2);
  MotifCorpus data(tiny_data());
  PhasePlan plan{{simple_phase(400, 10, {{100, 2}, {200, 4}})}};
  const RunLog log = run_phase_plan(plan, m, data);
  std::uint64_t before = 0;
  for (const auto& s : log.steps) {
    EXPECT_EQ(s.batch_size, before >= 200 ? 4u : 2u) << "step " << s.step;
    before = s.tokens_seen;
  }
  EXPECT_EQ(log.steps.size(), 10u + 5u);
}

TEST(RunPhasePlan, RopeBaseFollowsPhases) {
  Model m = build_model(tiny_model(), 3);
  MotifCorpus data(tiny_data());
  PhasePlan plan{{simple_phase(64, 8, {{0, 2}}, 1e4), simple_phase(64, 16, {{0, 1}}, 1e5)}};
  const RunLog log = run_phase_plan(plan, m, data);
  ASSERT_EQ(log.steps.size(), 8u);
  for (const auto& s : log.steps) {
    EXPECT_EQ(s.rope_base, s.phase == 0 ? 1e4 : 1e5);
    EXPECT_EQ(s.seq_len, s.phase == 0 ? 8u : 16u);
  }
  EXPECT_EQ(m.config.rope_base, 1e5);
}

TEST(RunPhasePlan, BitReproducible) {
  auto run = [] {
    Model m = build_model(tiny_model(), 4);
    MotifCorpus data(tiny_data());
    PhasePlan plan{{simple_phase(600, 12, {{0, 2}, {300, 3}})}};
    return run_phase_plan(plan, m, data).to_jsonl();
  };
  const std::string a = run();
  EXPECT_EQ(a, run());
  EXPECT_FALSE(a.empty());
}

TEST(RunPhasePlan, DataExhaustionStopsCleanly) {
  Model m = build_model(tiny_model(), 5);
  MotifCorpusSpec d = tiny_data();
  d.max_tokens = 3 * 2 * 9;
  MotifCorpus data(d);
  PhasePlan plan{{simple_phase(1000, 8, {{0, 2}})}};
  const RunLog log = run_phase_plan(plan, m, data);
  EXPECT_EQ(log.status, "data_exhausted");
  EXPECT_EQ(log.steps.size(), 3u);
}

TEST(RunPhasePlan, NonFiniteLossMarksDivergence) {
  Model m = build_model(tiny_model(), 6);
  m.lm_head.fill(std::numeric_limits<double>::infinity());
  MotifCorpus data(tiny_data());
  PhasePlan plan{{simple_phase(100, 8, {{0, 2}})}};
  const RunLog log = run_phase_plan(plan, m, data);
  EXPECT_EQ(log.status, "diverged");
  ASSERT_EQ(log.steps.size(), 1u);
  EXPECT_TRUE(std::isnan(log.steps[0].loss));
}

TEST(RunLog, JsonlRoundTrip) {
  RunLog log;
  log.steps.push_back({0, 0, 16, 3.141592653589793, 0.1, 1e-4, 2, 8, 1e4});
  log.steps.push_back({1, 1, 32, std::numeric_limits<double>::quiet_NaN(), 0.2, 7.5e-6, 1, 16, 1e5});
  const std::string text = log.to_jsonl();
  const RunLog back = RunLog::from_jsonl(text);
  ASSERT_EQ(back.steps.size(), 2u);
  EXPECT_EQ(back.steps[0].loss, 3.141592653589793);
  EXPECT_TRUE(std::isnan(back.steps[1].loss));
  EXPECT_EQ(back.to_jsonl(), text);
  EXPECT_NE(text.find("\"rope_base\""), std::string::npos);
}

}  // namespace
}  // namespace trainlab
