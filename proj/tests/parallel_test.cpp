// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "trainlab/context_parallel.hpp"
#include "trainlab/pipeline.hpp"

namespace trainlab {
namespace {

// ---------------------------------------------------------------------------
// Closed forms.

TEST(BubbleRatio, Examples) {
  EXPECT_EQ(bubble_ratio_1f1b_exact(8, 16), Rational(7, 23));
  EXPECT_NEAR(bubble_ratio_1f1b(8, 16), 0.304348, 5e-7);
  EXPECT_EQ(bubble_ratio_1f1b(1, 5), 0.0);
  EXPECT_NEAR(bubble_ratio_1f1b(8, 1'000'000), 6.999e-6, 1e-9);
  EXPECT_EQ(bubble_ratio_interleaved_exact(8, 6, 16), Rational(7, 103));
  EXPECT_NEAR(bubble_ratio_interleaved(8, 6, 16), 0.067961, 5e-7);
  EXPECT_EQ(bubble_ratio_interleaved_exact(4, 2, 8), Rational(3, 19));
  EXPECT_NEAR(bubble_ratio_interleaved(4, 2, 8), 0.157895, 5e-7);
  EXPECT_THROW(bubble_ratio_1f1b(0, 4), ArgumentError);
  EXPECT_THROW(bubble_ratio_interleaved(2, 0, 4), ArgumentError);
}

TEST(BubbleRatio, InterleavedReducesTo1f1b) {
  for (std::int64_t p = 1; p <= 16; ++p) {
    for (std::int64_t n = 1; n <= 64; ++n) {
      EXPECT_EQ(bubble_ratio_interleaved(p, 1, n), bubble_ratio_1f1b(p, n));
      EXPECT_EQ(bubble_ratio_interleaved_exact(p, 1, n), bubble_ratio_1f1b_exact(p, n));
    }
  }
}

TEST(Rational, Reduces) {
  EXPECT_EQ(Rational(14, 46), Rational(7, 23));
  EXPECT_EQ(Rational(0, 5), Rational(0, 1));
  EXPECT_EQ(Rational(3, -6).str(), "-1/2");
  EXPECT_THROW(Rational(1, 0), ArgumentError);
}

// ---------------------------------------------------------------------------
// Simulator.

TEST(SimulateSchedule, TwoStageOneMicroBatchByHand) {
  // Stage 0: F[0,1) then waits for stage 1's F[1,2) and B[2,4) before B[4,6).
  const auto spec = PipelineSpec::uniform(2, 1, 1);
  const auto tl = simulate_schedule(spec);
  EXPECT_EQ(tl.makespan, 6);
  EXPECT_EQ(tl.busy, 6);
  EXPECT_EQ(tl.idle_fraction, Rational(1, 2));
  const auto& d0 = tl.devices[0];
  ASSERT_EQ(d0.size(), 3u);
  EXPECT_EQ(d0[0].kind, EventKind::fwd);
  EXPECT_EQ(d0[1].kind, EventKind::idle);
  EXPECT_EQ(d0[1].start, 1);
  EXPECT_EQ(d0[1].end, 4);
  EXPECT_EQ(d0[2].start, 4);
  EXPECT_EQ(d0[2].end, 6);
}

TEST(SimulateSchedule, ReferenceConfigurations) {
  EXPECT_EQ(simulate_schedule(PipelineSpec::uniform(8, 1, 16)).idle_fraction, Rational(7, 23));
  EXPECT_EQ(simulate_schedule(PipelineSpec::uniform(8, 6, 16)).idle_fraction, Rational(7, 103));
}

TEST(SimulateSchedule, MatchesClosedFormWheneverGroupsAreFull) {
  // 1F1B for any n, interleaved whenever n is a multiple of p.
  for (std::int64_t p : {1, 2, 3, 4, 8}) {
    for (std::int64_t v : {1, 2, 3, 6}) {
      for (std::int64_t n : {1, 2, 3, 4, 5, 8, 9, 16, 24, 32}) {
        if (v > 1 && n % p != 0) continue;
        const auto spec = PipelineSpec::uniform(p, v, n);
        const auto tl = simulate_schedule(spec);
        EXPECT_EQ(tl.idle_fraction, bubble_ratio_interleaved_exact(p, v, n)) << p << " " << v << " " << n;
        EXPECT_TRUE(validate_timeline(spec, tl).empty());
      }
    }
  }
}

TEST(SimulateSchedule, PartialGroupsRespectCriticalPath) {
  // With fewer micro-batches than stages the first micro-batch's round trip
  // through all p*v virtual stages bounds the makespan from below.
  for (std::int64_t p : {2, 4, 8}) {
    for (std::int64_t v : {2, 6}) {
      for (std::int64_t n = 1; n < p; ++n) {
        const auto spec = PipelineSpec::uniform(p, v, n);
        const auto tl = simulate_schedule(spec);
        EXPECT_GE(tl.makespan, 3 * p * v);
        EXPECT_TRUE(validate_timeline(spec, tl).empty());
      }
    }
  }
}

TEST(SimulateSchedule, RandomCostsGiveValidTimelines) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    PipelineSpec spec;
    spec.p = static_cast<std::int64_t>(testing::random_size(rng, 1, 6));
    spec.v = static_cast<std::int64_t>(testing::random_size(rng, 1, 4));
    spec.n = static_cast<std::int64_t>(testing::random_size(rng, 1, 13));
    for (std::int64_t s = 0; s < spec.stages(); ++s) {
      spec.fwd_cost.push_back(static_cast<std::int64_t>(testing::random_size(rng, 1, 5)));
      spec.bwd_cost.push_back(static_cast<std::int64_t>(testing::random_size(rng, 1, 9)));
    }
    const auto tl = simulate_schedule(spec);
    const auto issues = validate_timeline(spec, tl);
    EXPECT_TRUE(issues.empty()) << issues.front();
    std::int64_t busy = 0;
    for (std::size_t i = 0; i < spec.fwd_cost.size(); ++i) busy += spec.n * (spec.fwd_cost[i] + spec.bwd_cost[i]);
    EXPECT_EQ(tl.busy, busy);
    EXPECT_EQ(tl.idle_fraction, Rational(spec.p * tl.makespan - busy, spec.p * tl.makespan));
  }
}

TEST(SimulateSchedule, RejectsBadSpecs) {
  PipelineSpec s = PipelineSpec::uniform(2, 2, 2);
  s.fwd_cost.pop_back();
  EXPECT_THROW(simulate_schedule(s), ArgumentError);
  s = PipelineSpec::uniform(2, 1, 2);
  s.bwd_cost[0] = 0;
  EXPECT_THROW(simulate_schedule(s), ArgumentError);
}

// ---------------------------------------------------------------------------
// Stage balancing.

std::int64_t brute_force_min_max(const std::vector<std::int64_t>& costs, std::size_t groups) {
  // Every placement of groups-1 cuts among the costs.size()-1 gaps.
  const std::size_t gaps = costs.size() - 1;
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (std::uint32_t bits = 0; bits < (1u << gaps); ++bits) {
    if (static_cast<std::size_t>(__builtin_popcount(bits)) != groups - 1) continue;
    std::int64_t cur = 0, worst = 0;
    for (std::size_t i = 0; i < costs.size(); ++i) {
      cur += costs[i];
      if (i == gaps || (bits >> i & 1u)) {
        worst = std::max(worst, cur);
        cur = 0;
      }
    }
    best = std::min(best, worst);
  }
  return best;
}

TEST(BalanceStages, Examples) {
  const auto a = balance_stages({3, 1, 1, 1}, 2, 1);
  EXPECT_EQ(a.max_cost, 3);
  EXPECT_EQ(a.group_sizes, (std::vector<std::size_t>{1, 3}));

  const auto u = balance_stages(std::vector<std::int64_t>(94, 1), 8, 6);
  EXPECT_EQ(u.max_cost, 2);
  EXPECT_EQ(u.group_sizes.size(), 48u);
  for (std::size_t g : u.group_sizes) EXPECT_TRUE(g == 1 || g == 2);
  EXPECT_EQ(std::accumulate(u.group_sizes.begin(), u.group_sizes.end(), std::size_t{0}), 94u);

  const auto one = balance_stages({4, 5, 6}, 1, 1);
  EXPECT_EQ(one.max_cost, 15);
  EXPECT_EQ(one.group_sizes, (std::vector<std::size_t>{3}));
  EXPECT_THROW(balance_stages({1, 2, 3}, 2, 2), ArgumentError);
}

TEST(BalanceStages, MatchesBruteForce) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t L = testing::random_size(rng, 1, 14);
    std::vector<std::int64_t> costs(L);
    for (auto& c : costs) c = static_cast<std::int64_t>(testing::random_size(rng, 1, 20));
    const std::size_t k = testing::random_size(rng, 1, L);
    const auto a = balance_stages(costs, static_cast<std::int64_t>(k), 1);
    EXPECT_EQ(a.max_cost, brute_force_min_max(costs, k));
    EXPECT_EQ(*std::max_element(a.group_costs.begin(), a.group_costs.end()), a.max_cost);
    EXPECT_EQ(a.group_sizes.size(), k);
  }
}

TEST(BalanceStages, ReportsSimulatedIdle) {
  const auto a = balance_stages(std::vector<std::int64_t>(16, 1), 4, 1, 8);
  EXPECT_EQ(a.idle_fraction, bubble_ratio_1f1b_exact(4, 8));
}

// ---------------------------------------------------------------------------
// Context parallelism.

TEST(CpPartition, Examples) {
  EXPECT_EQ(cp_partition(CompressedMask({4}), 2, CpStrategy::naive).workload, (std::vector<std::uint64_t>{3, 7}));
  EXPECT_EQ(cp_partition(CompressedMask({8}), 2, CpStrategy::megatron_2cp).workload,
            (std::vector<std::uint64_t>{18, 18}));
  EXPECT_EQ(cp_partition(CompressedMask({6, 2}), 2, CpStrategy::megatron_2cp).workload,
            (std::vector<std::uint64_t>{6, 18}));
  EXPECT_EQ(cp_partition(CompressedMask({8, 4}), 2, CpStrategy::balanced_subseq).workload,
            (std::vector<std::uint64_t>{23, 23}));
}

TEST(CpPartition, Errors) {
  EXPECT_THROW(cp_partition(CompressedMask({3}), 4, CpStrategy::naive), ArgumentError);
  EXPECT_THROW(cp_partition(CompressedMask({6}), 4, CpStrategy::megatron_2cp), ArgumentError);
  EXPECT_THROW(cp_partition(CompressedMask({8, 2}), 2, CpStrategy::balanced_subseq), ArgumentError);
  EXPECT_THROW(cp_partition(CompressedMask({8}), 0, CpStrategy::naive), ArgumentError);
  EXPECT_THROW(parse_cp_strategy("ring"), ArgumentError);
}

TEST(CpPartition, RandomPackingsAgreeWithPairCounting) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t cp = testing::random_size(rng, 1, 4);
    std::vector<std::size_t> lens(testing::random_size(rng, 1, 6));
    for (auto& l : lens) l = testing::random_size(rng, 2 * cp, 40);
    const CompressedMask mask(lens);
    for (CpStrategy s : {CpStrategy::naive, CpStrategy::megatron_2cp, CpStrategy::balanced_subseq}) {
      const CpPlan plan = cp_partition(mask, cp, s);
      const auto owner = plan.owner(mask.total());
      EXPECT_EQ(plan.workload, oracle::rank_pair_counts(lens, owner, cp));
      EXPECT_EQ(std::accumulate(plan.workload.begin(), plan.workload.end(), std::uint64_t{0}),
                causal_pair_count(mask));
      std::vector<int> covered(mask.total(), 0);
      for (const auto& c : plan.chunks) {
        for (std::size_t i = c.start; i < c.end; ++i) ++covered[i];
      }
      EXPECT_TRUE(std::all_of(covered.begin(), covered.end(), [](int c) { return c == 1; }));
    }
  }
}

TEST(CpPartition, MegatronEqualsBalancedForOneDocument) {
  for (std::size_t cp : {1u, 2u, 3u, 4u}) {
    for (std::size_t len = 2 * cp; len <= 70; ++len) {
      const CompressedMask mask({len});
      const auto a = cp_partition(mask, cp, CpStrategy::megatron_2cp);
      const auto b = cp_partition(mask, cp, CpStrategy::balanced_subseq);
      EXPECT_EQ(a.workload, b.workload);
      EXPECT_EQ(a.owner(len), b.owner(len));
    }
  }
}

TEST(CpPartition, BalancedIsExactForDivisibleDocuments) {
  // Every ordered packing of documents whose lengths are multiples of 2*cp,
  // T <= 48 here; the acceptance run covers T <= 64.
  for (std::size_t cp : {2u, 4u}) {
    const std::size_t unit = 2 * cp;
    std::size_t checked = 0;
    std::vector<std::size_t> lens;
    std::function<void(std::size_t)> rec = [&](std::size_t remaining) {
      if (!lens.empty()) {
        const auto plan = cp_partition(CompressedMask(lens), cp, CpStrategy::balanced_subseq);
        const auto pairs = oracle::rank_pair_counts(lens, plan.owner(CompressedMask(lens).total()), cp);
        ASSERT_TRUE(std::all_of(pairs.begin(), pairs.end(), [&](std::uint64_t w) { return w == pairs[0]; }));
        ++checked;
      }
      for (std::size_t l = unit; l <= remaining; l += unit) {
        lens.push_back(l);
        rec(remaining - l);
        lens.pop_back();
      }
    };
    rec(48);
    EXPECT_EQ(checked, (std::size_t{1} << (48 / unit)) - 1);
  }
}

}  // namespace
}  // namespace trainlab
