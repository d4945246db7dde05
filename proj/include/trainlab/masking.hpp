// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

// Reset-attention-mask handling for document-packed sequences.
//
// A packed sequence holds several documents back to back, each terminated by
// an end-of-document (eod) token. Attention must stay inside a document, so the
// full T x T mask is block diagonal with a causal triangle in each block. The
// mask is fully described by the per-document lengths (CompressedMask); the
// dense form is only materialized on request, by stitching a fixed causal
// template.

#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trainlab/errors.hpp"

namespace trainlab {

inline constexpr std::size_t kDefaultTemplateSide = 2048;
inline constexpr std::size_t kDefaultMaxMaskTokens = 16384;

struct DocumentPackedBatch {
  std::vector<int> tokens;
  int eod_id = 0;
};

/// Per-document lengths of a packed sequence. Storage is O(documents).
class CompressedMask {
 public:
  CompressedMask() = default;

  explicit CompressedMask(std::vector<std::size_t> seq_lens) : seq_lens_(std::move(seq_lens)) {
    for (std::size_t i = 0; i < seq_lens_.size(); ++i) {
      if (seq_lens_[i] == 0) {
        throw ArgumentError("document " + std::to_string(i) + " has length 0");
      }
      total_ += seq_lens_[i];
    }
  }

  /// A single document spanning all `total` positions (plain causal mask).
  static CompressedMask causal(std::size_t total) {
    return total == 0 ? CompressedMask() : CompressedMask(std::vector<std::size_t>{total});
  }

  const std::vector<std::size_t>& seq_lens() const noexcept { return seq_lens_; }
  std::size_t total() const noexcept { return total_; }
  std::size_t num_docs() const noexcept { return seq_lens_.size(); }

  /// Start offsets of every document.
  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> out(seq_lens_.size());
    std::size_t o = 0;
    for (std::size_t i = 0; i < seq_lens_.size(); ++i) {
      out[i] = o;
      o += seq_lens_[i];
    }
    return out;
  }

  /// Concatenation of two masks (second mask's documents follow the first's).
  CompressedMask concat(const CompressedMask& other) const {
    auto lens = seq_lens_;
    lens.insert(lens.end(), other.seq_lens_.begin(), other.seq_lens_.end());
    return CompressedMask(std::move(lens));
  }

  std::size_t memory_footprint() const noexcept { return sizeof(*this) + seq_lens_.capacity() * sizeof(std::size_t); }

  friend bool operator==(const CompressedMask&, const CompressedMask&) = default;

 private:
  std::vector<std::size_t> seq_lens_;
  std::size_t total_ = 0;
};

inline void to_json(nlohmann::json& j, const CompressedMask& m) { j = m.seq_lens(); }

inline void from_json(const nlohmann::json& j, CompressedMask& m) {
  if (!j.is_array()) {
    throw ArgumentError("compressed mask must be a JSON array of lengths");
  }
  std::vector<std::size_t> lens;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ArgumentError("compressed mask lengths must be non-negative integers");
    }
    lens.push_back(v.get<std::size_t>());
  }
  m = CompressedMask(std::move(lens));
}

/// Splits after every eod token; the eod belongs to the document it ends and a
/// trailing run without eod forms a final document.
inline CompressedMask extract_seq_lens(const DocumentPackedBatch& batch) {
  std::vector<std::size_t> lens;
  std::size_t run = 0;
  for (int tok : batch.tokens) {
    ++run;
    if (tok == batch.eod_id) {
      lens.push_back(run);
      run = 0;
    }
  }
  if (run > 0) {
    lens.push_back(run);
  }
  return CompressedMask(std::move(lens));
}

inline CompressedMask extract_seq_lens(std::span<const int> tokens, int eod_id) {
  return extract_seq_lens(DocumentPackedBatch{{tokens.begin(), tokens.end()}, eod_id});
}

/// Square boolean matrix, row = query position, column = key position.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  explicit BoolMatrix(std::size_t n) : n_(n), bits_(n * n, 0) {}

  std::size_t size() const noexcept { return n_; }
  bool operator()(std::size_t q, std::size_t k) const { return bits_[q * n_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { bits_[q * n_ + k] = v ? 1 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::accumulate(bits_.begin(), bits_.end(), std::size_t{0})); }

  friend bool operator==(const BoolMatrix&, const BoolMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Lower-triangular causal template: allowed(i, j) iff j <= i.
class MaskTemplate {
 public:
  explicit MaskTemplate(std::size_t side = kDefaultTemplateSide) : tri_(side) {
    if (side == 0) {
      throw ArgumentError("mask template side must be positive");
    }
    for (std::size_t i = 0; i < side; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        tri_.set(i, j, true);
      }
    }
  }

  std::size_t side() const noexcept { return tri_.size(); }
  bool operator()(std::size_t i, std::size_t j) const { return tri_(i, j); }

  static const MaskTemplate& default_template() {
    static const MaskTemplate tmpl(kDefaultTemplateSide);
    return tmpl;
  }

 private:
  BoolMatrix tri_;
};

/// Materializes the block-diagonal causal mask by tiling the template over
/// each document: diagonal tiles copy the template, tiles below the diagonal
/// are fully visible, tiles above it stay masked.
inline BoolMatrix expand_mask(const CompressedMask& mask, const MaskTemplate& tmpl,
                              std::size_t max_tokens = kDefaultMaxMaskTokens) {
  const std::size_t t = mask.total();
  if (t > max_tokens) {
    throw ResourceError("expand_mask: " + std::to_string(t) + " tokens exceeds limit " + std::to_string(max_tokens));
  }
  BoolMatrix out(t);
  const std::size_t side = tmpl.side();
  std::size_t offset = 0;
  for (std::size_t len : mask.seq_lens()) {
    const std::size_t tiles = (len + side - 1) / side;
    for (std::size_t bi = 0; bi < tiles; ++bi) {
      const std::size_t r0 = bi * side;
      const std::size_t r1 = std::min(len, r0 + side);
      for (std::size_t bj = 0; bj <= bi; ++bj) {
        const std::size_t c0 = bj * side;
        const std::size_t c1 = std::min(len, c0 + side);
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) {
            const bool allowed = bi > bj || tmpl(r - r0, c - c0);
            if (allowed) {
              out.set(offset + r, offset + c, true);
            }
          }
        }
      }
    }
    offset += len;
  }
  return out;
}

inline BoolMatrix expand_mask(const CompressedMask& mask, std::size_t max_tokens = kDefaultMaxMaskTokens) {
  return expand_mask(mask, MaskTemplate::default_template(), max_tokens);
}

}  // namespace trainlab
