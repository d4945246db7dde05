// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

// Forward and backward kernels for the dense operations the model needs.
// Every reduction runs sequentially over the last axis so results are
// bit-reproducible for a given build.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "trainlab/errors.hpp"
#include "trainlab/tensor.hpp"

namespace trainlab {

inline constexpr double kDefaultNormEps = 1e-6;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Eigen::Map<const Eigen::ArrayXd> as_array(const double* p, std::size_t n) {
  return Eigen::Map<const Eigen::ArrayXd>(p, static_cast<Eigen::Index>(n));
}

inline Eigen::Map<Eigen::ArrayXd> as_array(double* p, std::size_t n) {
  return Eigen::Map<Eigen::ArrayXd>(p, static_cast<Eigen::Index>(n));
}

/// Logistic function, vectorized. Saturates to exactly 0 or 1 far out.
inline Eigen::ArrayXd sigmoid(const double* z, std::size_t n) {
  return (1.0 + (-as_array(z, n)).exp()).inverse();
}

/// y = exp(x - max(x)) / sum over one row of length d; returns log-sum-exp.
/// The exponentials are vectorized, the sum is sequential.
inline double softmax_row(const double* x, double* y, std::size_t d) {
  double mx = x[0];
  for (std::size_t i = 1; i < d; ++i) {
    mx = std::max(mx, x[i]);
  }
  as_array(y, d) = (as_array(x, d) - mx).exp();
  double sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    sum += y[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < d; ++i) {
    y[i] *= inv;
  }
  return mx + std::log(sum);
}

inline void check_finite(const Tensor& t, const char* op) {
  const auto bad = t.first_non_finite();
  if (bad != t.size()) {
    throw NumericError(std::string(op) + ": non-finite input at flat index " + std::to_string(bad));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: a[..., k] x b[k, n] -> [..., n]

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.last_dim() != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out = Tensor::uninitialized(out_shape);
  detail::as_matrix(out, m, n).noalias() = detail::as_matrix(a, m, k) * detail::as_matrix(b, k, n);
  return out;
}

/// Accumulates the matmul input gradients: ga += gy * b^T and gb += a^T * gy.
/// Either output may be null when that gradient is not needed.
inline void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& gy, Tensor* ga, Tensor* gb) {
  const std::size_t m = a.rows();
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  if (ga != nullptr) {
    detail::as_matrix(*ga, m, k).noalias() += detail::as_matrix(gy, m, n) * detail::as_matrix(b, k, n).transpose();
  }
  if (gb != nullptr) {
    detail::as_matrix(*gb, k, n).noalias() += detail::as_matrix(a, m, k).transpose() * detail::as_matrix(gy, m, n);
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += b[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// RMSNorm over the last axis: y = gamma * x / sqrt(mean(x^2) + eps)

inline Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps = kDefaultNormEps) {
  if (gamma.rank() != 1 || x.rank() < 1 || x.last_dim() != gamma.size()) {
    throw DimensionError("rmsnorm: input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()));
  }
  if (!(eps >= 0.0)) {
    throw ArgumentError("rmsnorm: eps must be non-negative");
  }
  detail::check_finite(x, "rmsnorm");
  const std::size_t d = gamma.size();
  const std::size_t rows = x.rows();
  Tensor out = Tensor::uninitialized(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * d;
    double* yr = out.ptr() + r * d;
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      ss += xr[i] * xr[i];
    }
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t i = 0; i < d; ++i) {
      yr[i] = gamma[i] * (xr[i] * inv);
    }
  }
  return out;
}

inline void rmsnorm_backward(const Tensor& x, const Tensor& gamma, double eps, const Tensor& gy, Tensor* gx,
                             Tensor* ggamma) {
  const std::size_t d = gamma.size();
  const std::size_t rows = x.rows();
  const double dd = static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * d;
    const double* gyr = gy.ptr() + r * d;
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      ss += xr[i] * xr[i];
    }
    const double inv = 1.0 / std::sqrt(ss / dd + eps);
    if (ggamma != nullptr) {
      for (std::size_t i = 0; i < d; ++i) {
        (*ggamma)[i] += gyr[i] * xr[i] * inv;
      }
    }
    if (gx != nullptr) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        dot += gamma[i] * gyr[i] * xr[i];
      }
      const double coef = inv * inv * inv * dot / dd;
      double* gxr = gx->ptr() + r * d;
      for (std::size_t i = 0; i < d; ++i) {
        gxr[i] += inv * gamma[i] * gyr[i] - coef * xr[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// SwiGLU gating: silu(gate) * up

inline Tensor swiglu(const Tensor& gate, const Tensor& up) {
  require_same_shape(gate, up, "swiglu");
  Tensor out = Tensor::uninitialized(gate.shape());
  const std::size_t n = out.size();
  detail::as_array(out.ptr(), n) =
      detail::as_array(gate.ptr(), n) * detail::sigmoid(gate.ptr(), n) * detail::as_array(up.ptr(), n);
  return out;
}

inline void swiglu_backward(const Tensor& gate, const Tensor& up, const Tensor& gy, Tensor* ggate, Tensor* gup) {
  const std::size_t n = gate.size();
  const Eigen::ArrayXd s = detail::sigmoid(gate.ptr(), n);
  const auto g = detail::as_array(gate.ptr(), n);
  const auto u = detail::as_array(up.ptr(), n);
  const auto dy = detail::as_array(gy.ptr(), n);
  if (ggate != nullptr) {
    detail::as_array(ggate->ptr(), n) += dy * u * (s + g * s * (1.0 - s));
  }
  if (gup != nullptr) {
    detail::as_array(gup->ptr(), n) += dy * g * s;
  }
}

// ---------------------------------------------------------------------------
// Softmax over the last axis, after max subtraction.

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.last_dim() == 0) {
    throw DimensionError("softmax_lastdim: empty last dimension in " + shape_str(x.shape()));
  }
  const std::size_t d = x.last_dim();
  Tensor out = Tensor::uninitialized(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    detail::softmax_row(x.ptr() + r * d, out.ptr() + r * d, d);
  }
  return out;
}

/// gx += y * (gy - <gy, y>) row-wise, where y is the softmax output.
inline void softmax_lastdim_backward(const Tensor& y, const Tensor& gy, Tensor& gx) {
  const std::size_t d = y.last_dim();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double* yr = y.ptr() + r * d;
    const double* gr = gy.ptr() + r * d;
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += yr[i] * gr[i];
    }
    double* out = gx.ptr() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      out[i] += yr[i] * (gr[i] - dot);
    }
  }
}

// ---------------------------------------------------------------------------
// Embedding table lookup: table[V, d], ids[T] -> [T, d]

inline Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  Tensor out = Tensor::uninitialized(Shape{ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw ArgumentError("embedding_lookup: token id " + std::to_string(ids[t]) + " outside vocab of " +
                          std::to_string(vocab));
    }
    std::copy_n(table.ptr() + static_cast<std::size_t>(ids[t]) * d, d, out.ptr() + t * d);
  }
  return out;
}

inline void embedding_backward(std::span<const int> ids, const Tensor& gy, Tensor& gtable) {
  const std::size_t d = gtable.dim(1);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    double* row = gtable.ptr() + static_cast<std::size_t>(ids[t]) * d;
    const double* g = gy.ptr() + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      row[i] += g[i];
    }
  }
}

}  // namespace trainlab
