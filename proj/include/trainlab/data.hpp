// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trainlab/errors.hpp"
#include "trainlab/json_util.hpp"
#include "trainlab/masking.hpp"
#include "trainlab/rope.hpp"

namespace trainlab {

/// A training step's worth of rows packed into one stream. Row boundaries
/// are also document boundaries of `mask`, so rows never attend to each other.
struct Batch {
  std::size_t rows = 0;
  std::size_t seq_len = 0;
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<double> weights;
  CompressedMask mask;
  std::vector<std::int64_t> positions;

  std::size_t size() const { return tokens.size(); }
};

class DataSource {
 public:
  virtual ~DataSource() = default;
  /// Next batch of `rows` sequences of `seq_len` inputs, or nothing once the
  /// source is exhausted.
  virtual std::optional<Batch> next(std::size_t rows, std::size_t seq_len) = 0;
};

namespace detail {

// Appends one row; positions restart at every document start in the row.
inline void append_row(Batch& b, const std::vector<int>& inputs, const std::vector<int>& targets,
                       const std::vector<double>& weights, int eod_id, bool split_documents) {
  b.tokens.insert(b.tokens.end(), inputs.begin(), inputs.end());
  b.targets.insert(b.targets.end(), targets.begin(), targets.end());
  b.weights.insert(b.weights.end(), weights.begin(), weights.end());
  const CompressedMask row = split_documents ? extract_seq_lens(inputs, eod_id) : CompressedMask::causal(inputs.size());
  for (std::size_t len : row.seq_lens()) {
    for (std::size_t i = 0; i < len; ++i) b.positions.push_back(static_cast<std::int64_t>(i));
  }
  b.mask = b.mask.total() == 0 ? row : b.mask.concat(row);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Motif corpus: documents generated by a sparse random Markov chain. Each
// token has `branching` possible successors, so the achievable loss is
// bounded below by the chain's entropy; smaller branching is easier.

struct MotifCorpusSpec {
  std::size_t vocab_size = 512;
  int eod_id = 0;
  std::size_t branching = 4;
  std::size_t min_doc_len = 16;
  std::size_t max_doc_len = 96;
  std::uint64_t seed = 1;
  std::uint64_t max_tokens = 0;  // 0 = unlimited

  void validate() const {
    if (vocab_size < 3) throw ConfigError("data.vocab_size must be at least 3");
    if (eod_id < 0 || static_cast<std::size_t>(eod_id) >= vocab_size) throw ConfigError("data.eod_id out of range");
    if (branching < 1 || branching > vocab_size - 1) throw ConfigError("data.branching must be in [1, vocab_size-1]");
    if (min_doc_len < 1 || max_doc_len < min_doc_len) throw ConfigError("data: need 1 <= min_doc_len <= max_doc_len");
  }

  friend bool operator==(const MotifCorpusSpec&, const MotifCorpusSpec&) = default;
};

inline void to_json(json& j, const MotifCorpusSpec& s) {
  j = {{"kind", "motif"},         {"vocab_size", s.vocab_size},   {"eod_id", s.eod_id},
       {"branching", s.branching}, {"min_doc_len", s.min_doc_len}, {"max_doc_len", s.max_doc_len},
       {"seed", s.seed},           {"max_tokens", s.max_tokens}};
}

inline MotifCorpusSpec motif_spec_from_json(const json& j, const std::string& path = "data") {
  MotifCorpusSpec s;
  JsonReader r(j, path);
  std::string kind = "motif";
  r.get("kind", kind);
  if (kind != "motif") throw ConfigError(path + ".kind: unknown data kind '" + kind + "'");
  r.get("vocab_size", s.vocab_size);
  r.get("eod_id", s.eod_id);
  r.get("branching", s.branching);
  r.get("min_doc_len", s.min_doc_len);
  r.get("max_doc_len", s.max_doc_len);
  r.get("seed", s.seed);
  r.get("max_tokens", s.max_tokens);
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

class MotifCorpus : public DataSource {
 public:
  explicit MotifCorpus(MotifCorpusSpec spec) : spec_(spec), rng_(spec.seed) {
    spec_.validate();
    const std::size_t v = spec_.vocab_size;
    successors_.resize(v);
    cumulative_.resize(v);
    std::uniform_int_distribution<int> tok(0, static_cast<int>(v) - 1);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (std::size_t s = 0; s < v; ++s) {
      while (successors_[s].size() < spec_.branching) {
        const int t = tok(rng_);
        if (t == spec_.eod_id || std::find(successors_[s].begin(), successors_[s].end(), t) != successors_[s].end()) {
          continue;
        }
        successors_[s].push_back(t);
      }
      double acc = 0.0;
      for (std::size_t i = 0; i < spec_.branching; ++i) {
        acc += u(rng_);
        cumulative_[s].push_back(acc);
      }
      for (double& c : cumulative_[s]) c /= acc;
    }
  }

  std::optional<Batch> next(std::size_t rows, std::size_t seq_len) override {
    if (rows == 0 || seq_len == 0) throw ArgumentError("MotifCorpus::next: rows and seq_len must be positive");
    const std::uint64_t need = static_cast<std::uint64_t>(rows) * (seq_len + 1);
    if (spec_.max_tokens != 0 && emitted_ + need > spec_.max_tokens) {
      return std::nullopt;
    }
    Batch b;
    b.rows = rows;
    b.seq_len = seq_len;
    std::vector<int> chunk(seq_len + 1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (int& t : chunk) t = next_token();
      std::vector<int> in(chunk.begin(), chunk.end() - 1);
      std::vector<int> tg(chunk.begin() + 1, chunk.end());
      detail::append_row(b, in, tg, std::vector<double>(seq_len, 1.0), spec_.eod_id, true);
    }
    emitted_ += need;
    return b;
  }

  const MotifCorpusSpec& spec() const { return spec_; }

 private:
  int next_token() {
    if (remaining_ == 0) {
      if (started_) {
        started_ = false;
        return spec_.eod_id;
      }
      remaining_ = std::uniform_int_distribution<std::size_t>(spec_.min_doc_len, spec_.max_doc_len)(rng_);
      int t;
      do {
        t = std::uniform_int_distribution<int>(0, static_cast<int>(spec_.vocab_size) - 1)(rng_);
      } while (t == spec_.eod_id);
      current_ = t;
      started_ = true;
      --remaining_;
      return current_;
    }
    const auto& cum = cumulative_[static_cast<std::size_t>(current_)];
    const double x = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    const std::size_t i = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), x) - cum.begin());
    current_ = successors_[static_cast<std::size_t>(current_)][std::min(i, spec_.branching - 1)];
    --remaining_;
    return current_;
  }

  MotifCorpusSpec spec_;
  std::mt19937_64 rng_;
  std::vector<std::vector<int>> successors_;
  std::vector<std::vector<double>> cumulative_;
  std::size_t remaining_ = 0;
  bool started_ = false;
  int current_ = 0;
  std::uint64_t emitted_ = 0;
};

// ---------------------------------------------------------------------------
// Key-value retrieval task. Token layout:
//   0 EOD, 1 NEEDLE, 2 QUERY,
//   [3, 3+n_keys) keys, [3+n_keys, 3+n_keys+n_values) values, rest filler.
// A needle is [NEEDLE, key, value]; a query is [QUERY, key] and the model
// must predict the value at the key position.
// Every row and haystack opens with EOD as a document-start marker.

struct NiahTaskSpec {
  std::size_t vocab_size = 512;
  std::size_t n_keys = 64;
  std::size_t n_values = 64;
  std::size_t train_pairs = 4;  // needles (and queries) per training row
  std::uint64_t seed = 1;

  static constexpr int kEod = 0;
  static constexpr int kNeedle = 1;
  static constexpr int kQuery = 2;

  int key(std::size_t i) const { return 3 + static_cast<int>(i); }
  int value(std::size_t i) const { return 3 + static_cast<int>(n_keys + i); }
  int filler_lo() const { return 3 + static_cast<int>(n_keys + n_values); }
  int filler_hi() const { return static_cast<int>(vocab_size) - 1; }

  void validate() const {
    if (n_keys < 1 || n_values < 1) throw ConfigError("niah task needs at least one key and one value");
    if (3 + n_keys + n_values >= vocab_size) throw ConfigError("niah task: vocab too small for keys, values and filler");
    if (train_pairs < 1 || train_pairs > n_keys) throw ConfigError("niah task: train_pairs must be in [1, n_keys]");
  }
};

inline constexpr std::size_t kNiahMinContext = 6;

struct NiahCase {
  std::vector<int> tokens;  // ends with [QUERY, key]
  int answer = 0;
  double depth = 0.0;
};

/// One haystack of `context_len` tokens with the needle starting at
/// 1 + round(depth * (context_len - 6)), so depth 0 follows the leading EOD
/// and depth 1 places the needle directly before the query.
inline NiahCase make_niah_case(const NiahTaskSpec& spec, std::size_t context_len, double depth, std::mt19937_64& rng) {
  if (context_len < kNiahMinContext) {
    throw ArgumentError("niah context must hold EOD, needle and query (" + std::to_string(kNiahMinContext) + " tokens)");
  }
  if (!(depth >= 0.0 && depth <= 1.0)) throw ArgumentError("niah depth must lie in [0, 1]");
  std::uniform_int_distribution<int> filler(spec.filler_lo(), spec.filler_hi());
  NiahCase c;
  c.depth = depth;
  c.tokens.resize(context_len);
  for (int& t : c.tokens) t = filler(rng);
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, spec.n_keys - 1)(rng);
  const std::size_t v = std::uniform_int_distribution<std::size_t>(0, spec.n_values - 1)(rng);
  c.tokens[0] = NiahTaskSpec::kEod;
  const auto at = 1 + static_cast<std::size_t>(std::llround(depth * static_cast<double>(context_len - 6)));
  c.tokens[at] = NiahTaskSpec::kNeedle;
  c.tokens[at + 1] = spec.key(k);
  c.tokens[at + 2] = spec.value(v);
  c.tokens[context_len - 2] = NiahTaskSpec::kQuery;
  c.tokens[context_len - 1] = spec.key(k);
  c.answer = spec.value(v);
  return c;
}

/// Training rows for the retrieval task: several needles with distinct keys
/// scattered in filler, each followed later by its query and answer. Loss
/// weight is placed only on the answer predictions.
class NiahTrainSource : public DataSource {
 public:
  explicit NiahTrainSource(NiahTaskSpec spec) : spec_(spec), rng_(spec.seed) { spec_.validate(); }

  std::optional<Batch> next(std::size_t rows, std::size_t seq_len) override {
    if (seq_len < 6 * spec_.train_pairs + 2) {
      throw ArgumentError("NiahTrainSource: seq_len too short for " + std::to_string(spec_.train_pairs) + " pairs");
    }
    Batch b;
    b.rows = rows;
    b.seq_len = seq_len;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<int> in, tg;
      std::vector<double> w;
      make_row(seq_len, in, tg, w);
      detail::append_row(b, in, tg, w, NiahTaskSpec::kEod, false);
    }
    return b;
  }

  const NiahTaskSpec& spec() const { return spec_; }

 private:
  void make_row(std::size_t seq_len, std::vector<int>& in, std::vector<int>& tg, std::vector<double>& w) {
    const std::size_t n = seq_len + 1;
    std::uniform_int_distribution<int> filler(spec_.filler_lo(), spec_.filler_hi());
    std::vector<int> row(n);
    for (int& t : row) t = filler(rng_);
    row[0] = NiahTaskSpec::kEod;
    std::vector<char> used(n, 0);
    used[0] = 1;
    std::vector<double> weight(n, 0.0);
    std::vector<std::size_t> keys(spec_.n_keys);
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
    std::shuffle(keys.begin(), keys.end(), rng_);
    auto free_at = [&](std::size_t at) { return !used[at] && !used[at + 1] && !used[at + 2]; };
    for (std::size_t p = 0; p < spec_.train_pairs; ++p) {
      const std::size_t k = keys[p];
      const std::size_t v = std::uniform_int_distribution<std::size_t>(0, spec_.n_values - 1)(rng_);
      // Needle in the first part, query strictly after it; retry until both fit.
      for (int attempt = 0; attempt < 1000; ++attempt) {
        const std::size_t a = std::uniform_int_distribution<std::size_t>(1, n - 6)(rng_);
        const std::size_t q = std::uniform_int_distribution<std::size_t>(a + 3, n - 3)(rng_);
        if (!free_at(a) || !free_at(q)) continue;
        row[a] = NiahTaskSpec::kNeedle;
        row[a + 1] = spec_.key(k);
        row[a + 2] = spec_.value(v);
        row[q] = NiahTaskSpec::kQuery;
        row[q + 1] = spec_.key(k);
        row[q + 2] = spec_.value(v);
        for (std::size_t i = 0; i < 3; ++i) used[a + i] = used[q + i] = 1;
        weight[q + 2] = 1.0;
        break;
      }
    }
    in.assign(row.begin(), row.end() - 1);
    tg.assign(row.begin() + 1, row.end());
    w.assign(weight.begin() + 1, weight.end());
  }

  NiahTaskSpec spec_;
  std::mt19937_64 rng_;
};

}  // namespace trainlab
