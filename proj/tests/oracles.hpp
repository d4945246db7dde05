// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations. None of these call into the code
// they are used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace trainlab::oracle {

/// Document index of every position, from eod positions directly.
inline std::vector<int> doc_ids(const std::vector<int>& tokens, int eod) {
  std::vector<int> ids(tokens.size());
  int doc = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ids[i] = doc;
    if (tokens[i] == eod) ++doc;
  }
  return ids;
}

/// allowed[q][k] = same document and k <= q.
inline std::vector<std::vector<bool>> brute_force_mask(const std::vector<int>& tokens, int eod) {
  const auto ids = doc_ids(tokens, eod);
  const std::size_t t = tokens.size();
  std::vector<std::vector<bool>> m(t, std::vector<bool>(t, false));
  for (std::size_t q = 0; q < t; ++q) {
    for (std::size_t k = 0; k <= q; ++k) m[q][k] = ids[q] == ids[k];
  }
  return m;
}

/// Plain causal softmax attention on one document, row-major [T, heads, hd]
/// buffers, GQA by integer division of the query head.
inline std::vector<double> causal_attention(const std::vector<double>& q, const std::vector<double>& k,
                                            const std::vector<double>& v, std::size_t t, std::size_t qh,
                                            std::size_t kvh, std::size_t hd) {
  std::vector<double> out(t * qh * hd, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t h = 0; h < qh; ++h) {
    const std::size_t g = h / (qh / kvh);
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[(i * qh + h) * hd + c] * k[(j * kvh + g) * hd + c];
        s[j] = dot * scale;
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        for (std::size_t c = 0; c < hd; ++c) out[(i * qh + h) * hd + c] += s[j] / z * v[(j * kvh + g) * hd + c];
      }
    }
  }
  return out;
}

/// Concatenation of independent per-document causal attentions.
inline std::vector<double> per_document_attention(const std::vector<double>& q, const std::vector<double>& k,
                                                  const std::vector<double>& v, const std::vector<std::size_t>& lens,
                                                  std::size_t qh, std::size_t kvh, std::size_t hd) {
  std::vector<double> out;
  std::size_t off = 0;
  for (std::size_t len : lens) {
    auto slice = [&](const std::vector<double>& x, std::size_t heads) {
      return std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(off * heads * hd),
                                 x.begin() + static_cast<std::ptrdiff_t>((off + len) * heads * hd));
    };
    const auto o = causal_attention(slice(q, qh), slice(k, kvh), slice(v, kvh), len, qh, kvh, hd);
    out.insert(out.end(), o.begin(), o.end());
    off += len;
  }
  return out;
}

/// Textbook Adam (Kingma & Ba) on a flat vector, one parameter at a time.
struct Adam {
  double b1, b2, eps;
  std::vector<double> m, v;
  long t = 0;

  void step(std::vector<double>& theta, const std::vector<double>& g, double lr) {
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, static_cast<double>(t)));
      const double vh = v[i] / (1 - std::pow(b2, static_cast<double>(t)));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

/// Attended (query, key) pairs of the positions [lo, hi) of one document.
inline std::uint64_t causal_pairs(std::size_t lo, std::size_t hi) {
  std::uint64_t n = 0;
  for (std::size_t i = lo; i < hi; ++i) n += i + 1;
  return n;
}

/// Attended (q, k) pairs per rank, counted one pair at a time from the
/// reset-mask definition: same document and k <= q.
inline std::vector<std::uint64_t> rank_pair_counts(const std::vector<std::size_t>& lens,
                                                   const std::vector<std::size_t>& owner, std::size_t ranks) {
  std::vector<std::size_t> doc;
  for (std::size_t d = 0; d < lens.size(); ++d) doc.insert(doc.end(), lens[d], d);
  std::vector<std::uint64_t> out(ranks, 0);
  for (std::size_t q = 0; q < doc.size(); ++q) {
    for (std::size_t k = 0; k <= q; ++k) {
      if (doc[q] == doc[k]) ++out[owner[q]];
    }
  }
  return out;
}

/// Textbook BPE over string symbols: count pairs in an ordered map, take the
/// first maximum (lexicographically smallest pair), merge left to right.
inline std::vector<std::pair<std::string, std::string>> naive_bpe_merges(const std::vector<std::string>& docs,
                                                                         std::size_t num_merges) {
  std::vector<std::vector<std::string>> seqs;
  for (const auto& d : docs) {
    std::vector<std::string> s;
    for (char c : d) s.emplace_back(1, c);
    seqs.push_back(std::move(s));
  }
  std::vector<std::pair<std::string, std::string>> merges;
  while (merges.size() < num_merges) {
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const auto& s : seqs) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
    }
    if (counts.empty()) break;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto pair = best->first;
    merges.push_back(pair);
    for (auto& s : seqs) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == pair.first && s[i + 1] == pair.second) {
          out.push_back(pair.first + pair.second);
          i += 2;
        } else {
          out.push_back(s[i++]);
        }
      }
      s = std::move(out);
    }
  }
  return merges;
}

}  // namespace trainlab::oracle
