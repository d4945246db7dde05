// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trainlab/errors.hpp"
#include "trainlab/tensor.hpp"

namespace trainlab {

/// Rotary embedding settings plus the context-length -> base schedule used
/// during long-context extension.
struct RopeConfig {
  double base = 1e4;
  std::size_t head_dim = 64;
  std::vector<std::pair<std::size_t, double>> length_to_base = {
      {4096, 1e4}, {8192, 1e5}, {32768, 1.6e6}, {131072, 2.56e7}};

  void validate() const {
    if (!(base > 0.0)) {
      throw ConfigError("rope base must be positive");
    }
    if (head_dim == 0 || head_dim % 2 != 0) {
      throw ConfigError("rope head_dim must be even, got " + std::to_string(head_dim));
    }
    for (std::size_t i = 1; i < length_to_base.size(); ++i) {
      if (length_to_base[i].first <= length_to_base[i - 1].first ||
          length_to_base[i].second <= length_to_base[i - 1].second) {
        throw ConfigError("rope length_to_base table must be strictly increasing in length and base");
      }
    }
  }

  /// Base of the shortest scheduled context that covers `length`.
  double base_for_length(std::size_t length) const {
    for (const auto& [len, b] : length_to_base) {
      if (length <= len) {
        return b;
      }
    }
    throw ArgumentError("no rope base scheduled for context length " + std::to_string(length));
  }
};

/// Rotates each (2i, 2i+1) pair of the head dimension by pos * base^(-2i/head_dim).
/// x has shape [T, heads, head_dim] and positions has T entries. With
/// `inverse` the rotation runs backwards, which is also the adjoint used for
/// gradients.
inline Tensor rope_apply(const Tensor& x, std::span<const std::int64_t> positions, double base, bool inverse = false) {
  if (x.rank() != 3) {
    throw DimensionError("rope_apply: expected [T, heads, head_dim], got " + shape_str(x.shape()));
  }
  const std::size_t t = x.dim(0);
  const std::size_t heads = x.dim(1);
  const std::size_t hd = x.dim(2);
  if (hd % 2 != 0) {
    throw ConfigError("rope_apply: head_dim must be even, got " + std::to_string(hd));
  }
  if (positions.size() != t) {
    throw DimensionError("rope_apply: " + std::to_string(positions.size()) + " positions for " + std::to_string(t) +
                         " tokens");
  }
  if (!(base > 0.0)) {
    throw ArgumentError("rope_apply: base must be positive");
  }
  const std::size_t half = hd / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    inv_freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
  }
  const double sign = inverse ? -1.0 : 1.0;
  Tensor out = Tensor::uninitialized(x.shape());
  std::vector<double> cs(half);
  std::vector<double> sn(half);
  for (std::size_t p = 0; p < t; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(positions[p]) * inv_freq[i];
      cs[i] = std::cos(angle);
      sn[i] = sign * std::sin(angle);
    }
    for (std::size_t h = 0; h < heads; ++h) {
      const double* src = x.ptr() + (p * heads + h) * hd;
      double* dst = out.ptr() + (p * heads + h) * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const double a = src[2 * i];
        const double b = src[2 * i + 1];
        dst[2 * i] = a * cs[i] - b * sn[i];
        dst[2 * i + 1] = a * sn[i] + b * cs[i];
      }
    }
  }
  return out;
}

inline std::vector<std::int64_t> iota_positions(std::size_t n, std::int64_t start = 0) {
  std::vector<std::int64_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = start + static_cast<std::int64_t>(i);
  }
  return pos;
}

}  // namespace trainlab
