// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <vector>

#include "trainlab/kernels.hpp"
#include "trainlab/masking.hpp"
#include "trainlab/tensor.hpp"

namespace trainlab {

/// Logit assigned to masked pairs before max subtraction.
inline constexpr double kMaskedLogit = -1e30;

namespace detail {

struct AttentionDims {
  std::size_t tokens = 0;
  std::size_t q_heads = 0;
  std::size_t kv_heads = 0;
  std::size_t head_dim = 0;
};

inline AttentionDims check_attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v,
                                            const CompressedMask& mask) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.shape() != v.shape() || q.dim(0) != k.dim(0) ||
      q.dim(2) != k.dim(2)) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  AttentionDims dims{q.dim(0), q.dim(1), k.dim(1), q.dim(2)};
  if (dims.kv_heads == 0 || dims.q_heads % dims.kv_heads != 0) {
    throw DimensionError("attention: query heads must be a multiple of key/value heads");
  }
  if (mask.total() != dims.tokens) {
    throw DimensionError("attention: mask covers " + std::to_string(mask.total()) + " tokens, inputs have " +
                         std::to_string(dims.tokens));
  }
  return dims;
}

using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

inline StridedMap head_block(const Tensor& x, std::size_t offset, std::size_t len, std::size_t head) {
  const std::size_t heads = x.dim(1);
  const std::size_t hd = x.dim(2);
  return StridedMap(x.ptr() + offset * heads * hd + head * hd, static_cast<Eigen::Index>(len),
                    static_cast<Eigen::Index>(hd), Eigen::OuterStride<>(static_cast<Eigen::Index>(heads * hd)));
}

inline MutStridedMap head_block(Tensor& x, std::size_t offset, std::size_t len, std::size_t head) {
  const std::size_t heads = x.dim(1);
  const std::size_t hd = x.dim(2);
  return MutStridedMap(x.ptr() + offset * heads * hd + head * hd, static_cast<Eigen::Index>(len),
                       static_cast<Eigen::Index>(hd), Eigen::OuterStride<>(static_cast<Eigen::Index>(heads * hd)));
}

}  // namespace detail

/// Reference masked attention: materializes the full T x T mask, sets every
/// disallowed logit to a large negative constant and applies a softmax over
/// all keys. Supports grouped-query attention (k, v with fewer heads than q).
/// Logits are scaled by 1/sqrt(head_dim).
inline Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const CompressedMask& mask) {
  const auto dims = detail::check_attention_shapes(q, k, v, mask);
  const BoolMatrix allowed = expand_mask(mask);
  const std::size_t t = dims.tokens;
  const std::size_t hd = dims.head_dim;
  const std::size_t group = dims.q_heads / dims.kv_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out(q.shape());
  std::vector<double> logits(t);
  for (std::size_t h = 0; h < dims.q_heads; ++h) {
    const std::size_t kvh = h / group;
    for (std::size_t i = 0; i < t; ++i) {
      const double* qi = q.ptr() + (i * dims.q_heads + h) * hd;
      double mx = kMaskedLogit;
      for (std::size_t j = 0; j < t; ++j) {
        double s = kMaskedLogit;
        if (allowed(i, j)) {
          const double* kj = k.ptr() + (j * dims.kv_heads + kvh) * hd;
          s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            s += qi[c] * kj[c];
          }
          s *= scale;
        }
        logits[j] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        logits[j] = std::exp(logits[j] - mx);
        sum += logits[j];
      }
      double* oi = out.ptr() + (i * dims.q_heads + h) * hd;
      for (std::size_t j = 0; j < t; ++j) {
        const double p = logits[j] / sum;
        if (p == 0.0) {
          continue;
        }
        const double* vj = v.ptr() + (j * dims.kv_heads + kvh) * hd;
        for (std::size_t c = 0; c < hd; ++c) {
          oi[c] += p * vj[c];
        }
      }
    }
  }
  return out;
}

/// Softmax probabilities saved by the document-blocked forward pass, one
/// (len x len) matrix per (document, query head).
struct AttentionCache {
  std::vector<detail::RowMat> probs;
};

/// Document-blocked causal attention. Only the in-document causal triangle is
/// evaluated, so cost scales with sum(len^2) rather than T^2.
inline Tensor document_attention(const Tensor& q, const Tensor& k, const Tensor& v, const CompressedMask& mask,
                                 AttentionCache* cache = nullptr) {
  const auto dims = detail::check_attention_shapes(q, k, v, mask);
  const std::size_t group = dims.q_heads / dims.kv_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.head_dim));
  Tensor out = Tensor::uninitialized(q.shape());
  if (cache != nullptr) {
    cache->probs.clear();
    cache->probs.reserve(mask.num_docs() * dims.q_heads);
  }
  const auto offsets = mask.offsets();
  detail::RowMat probs;
  for (std::size_t d = 0; d < mask.num_docs(); ++d) {
    const std::size_t off = offsets[d];
    const std::size_t len = mask.seq_lens()[d];
    const auto n = static_cast<Eigen::Index>(len);
    for (std::size_t h = 0; h < dims.q_heads; ++h) {
      const std::size_t kvh = h / group;
      probs.noalias() = scale * (detail::head_block(q, off, len, h) * detail::head_block(k, off, len, kvh).transpose());
      for (Eigen::Index i = 0; i < n; ++i) {
        double* row = &probs(i, 0);
        detail::softmax_row(row, row, static_cast<std::size_t>(i + 1));
        std::fill(row + i + 1, row + n, 0.0);
      }
      detail::head_block(out, off, len, h).noalias() = probs * detail::head_block(v, off, len, kvh);
      if (cache != nullptr) {
        cache->probs.push_back(probs);
      }
    }
  }
  return out;
}

/// Accumulates gradients of document_attention into gq, gk, gv (any may be null).
inline void document_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const CompressedMask& mask,
                                        const AttentionCache& cache, const Tensor& gy, Tensor* gq, Tensor* gk,
                                        Tensor* gv) {
  const std::size_t q_heads = q.dim(1);
  const std::size_t group = q_heads / k.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  const auto offsets = mask.offsets();
  detail::RowMat dp;
  for (std::size_t d = 0; d < mask.num_docs(); ++d) {
    const std::size_t off = offsets[d];
    const std::size_t len = mask.seq_lens()[d];
    for (std::size_t h = 0; h < q_heads; ++h) {
      const std::size_t kvh = h / group;
      const auto& p = cache.probs[d * q_heads + h];
      const auto go = detail::head_block(gy, off, len, h);
      if (gv != nullptr) {
        detail::head_block(*gv, off, len, kvh).noalias() += p.transpose() * go;
      }
      if (gq == nullptr && gk == nullptr) {
        continue;
      }
      dp.noalias() = go * detail::head_block(v, off, len, kvh).transpose();
      for (Eigen::Index i = 0; i < dp.rows(); ++i) {
        double dot = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          dot += p(i, j) * dp(i, j);
        }
        for (Eigen::Index j = 0; j < dp.cols(); ++j) {
          dp(i, j) = j <= i ? scale * p(i, j) * (dp(i, j) - dot) : 0.0;
        }
      }
      if (gq != nullptr) {
        detail::head_block(*gq, off, len, h).noalias() += dp * detail::head_block(k, off, len, kvh);
      }
      if (gk != nullptr) {
        detail::head_block(*gk, off, len, kvh).noalias() += dp.transpose() * detail::head_block(q, off, len, h);
      }
    }
  }
}

}  // namespace trainlab
