// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trainlab/errors.hpp"
#include "trainlab/json_util.hpp"
#include "trainlab/masking.hpp"

namespace trainlab {

enum class CpStrategy { naive, megatron_2cp, balanced_subseq };

inline std::string to_string(CpStrategy s) {
  switch (s) {
    case CpStrategy::naive: return "naive";
    case CpStrategy::megatron_2cp: return "megatron_2cp";
    case CpStrategy::balanced_subseq: return "balanced_subseq";
  }
  return "?";
}

inline CpStrategy parse_cp_strategy(const std::string& s) {
  if (s == "naive") return CpStrategy::naive;
  if (s == "megatron_2cp") return CpStrategy::megatron_2cp;
  if (s == "balanced_subseq") return CpStrategy::balanced_subseq;
  throw ArgumentError("unknown cp strategy '" + s + "' (expected naive, megatron_2cp or balanced_subseq)");
}

/// Half-open range of packed positions owned by one rank.
struct CpChunk {
  std::size_t rank = 0;
  std::size_t start = 0;
  std::size_t end = 0;
};

struct CpPlan {
  std::size_t cp = 1;
  CpStrategy strategy = CpStrategy::naive;
  std::vector<CpChunk> chunks;           // in position order
  std::vector<std::uint64_t> workload;  // attended (q, k) pairs per rank

  /// Rank owning every packed position.
  std::vector<std::size_t> owner(std::size_t total) const {
    std::vector<std::size_t> out(total, 0);
    for (const auto& c : chunks) {
      for (std::size_t i = c.start; i < c.end; ++i) out[i] = c.rank;
    }
    return out;
  }
};

namespace detail {

/// Splits [start, start+len) into k chunks whose sizes differ by at most one,
/// larger chunks first.
inline std::vector<std::pair<std::size_t, std::size_t>> even_chunks(std::size_t start, std::size_t len, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t base = len / k, extra = len % k;
  std::size_t pos = start;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t sz = base + (i < extra ? 1 : 0);
    out.emplace_back(pos, pos + sz);
    pos += sz;
  }
  return out;
}

inline std::size_t mirrored_rank(std::size_t chunk, std::size_t cp) {
  return chunk < cp ? chunk : 2 * cp - 1 - chunk;
}

}  // namespace detail

/// Splits the packed sequence across cp ranks and counts each rank's causal
/// attention work under the reset mask: a query at in-document offset j
/// attends j + 1 keys.
inline CpPlan cp_partition(const CompressedMask& mask, std::size_t cp, CpStrategy strategy) {
  if (cp < 1) {
    throw ArgumentError("cp_partition: cp must be >= 1");
  }
  const std::size_t total = mask.total();
  CpPlan plan;
  plan.cp = cp;
  plan.strategy = strategy;
  switch (strategy) {
    case CpStrategy::naive:
      if (total < cp) {
        throw ArgumentError("cp_partition: " + std::to_string(total) + " tokens cannot feed cp=" + std::to_string(cp));
      }
      for (auto [a, b] : detail::even_chunks(0, total, cp)) plan.chunks.push_back({plan.chunks.size(), a, b});
      break;
    case CpStrategy::megatron_2cp: {
      if (total < 2 * cp) {
        throw ArgumentError("cp_partition: " + std::to_string(total) + " tokens cannot form " +
                            std::to_string(2 * cp) + " chunks");
      }
      std::size_t i = 0;
      for (auto [a, b] : detail::even_chunks(0, total, 2 * cp)) plan.chunks.push_back({detail::mirrored_rank(i++, cp), a, b});
      break;
    }
    case CpStrategy::balanced_subseq: {
      const auto offsets = mask.offsets();
      for (std::size_t d = 0; d < mask.num_docs(); ++d) {
        const std::size_t len = mask.seq_lens()[d];
        if (len < 2 * cp) {
          throw ArgumentError("cp_partition: document " + std::to_string(d) + " of length " + std::to_string(len) +
                              " is shorter than 2*cp=" + std::to_string(2 * cp));
        }
        std::size_t i = 0;
        for (auto [a, b] : detail::even_chunks(offsets[d], len, 2 * cp)) {
          plan.chunks.push_back({detail::mirrored_rank(i++, cp), a, b});
        }
      }
      break;
    }
  }
  // In-document offset of every position.
  std::vector<std::uint64_t> depth(total);
  std::size_t pos = 0;
  for (std::size_t len : mask.seq_lens()) {
    for (std::size_t j = 0; j < len; ++j) depth[pos++] = j + 1;
  }
  plan.workload.assign(cp, 0);
  for (const auto& c : plan.chunks) {
    for (std::size_t i = c.start; i < c.end; ++i) plan.workload[c.rank] += depth[i];
  }
  return plan;
}

inline std::uint64_t causal_pair_count(const CompressedMask& mask) {
  std::uint64_t s = 0;
  for (std::size_t len : mask.seq_lens()) s += static_cast<std::uint64_t>(len) * (len + 1) / 2;
  return s;
}

inline json cp_plan_to_json(const CpPlan& plan) {
  json chunks = json::array();
  for (const auto& c : plan.chunks) chunks.push_back({{"rank", c.rank}, {"start", c.start}, {"end", c.end}});
  return json{{"cp", plan.cp}, {"strategy", to_string(plan.strategy)}, {"chunks", chunks}, {"workloads", plan.workload}};
}

}  // namespace trainlab
