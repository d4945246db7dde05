// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-based reverse-mode differentiation.
//
// Every operation appends a node holding its value, its input node ids and a
// backward closure. Nodes are appended in evaluation order, so walking the
// tape backwards is a valid topological order and each node's closure runs
// exactly once. Gradients accumulate into per-node buffers, which makes
// fan-out (one value used by several ops) sum the branch contributions.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trainlab/attention.hpp"
#include "trainlab/errors.hpp"
#include "trainlab/kernels.hpp"
#include "trainlab/masking.hpp"
#include "trainlab/rope.hpp"
#include "trainlab/tensor.hpp"

namespace trainlab {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Called with the node's output gradient; pulls input values through the
  /// tape and pushes contributions with grad_slot().
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), nullptr, false); }

  /// Owned differentiable input.
  Var leaf(Tensor value) { return push(std::move(value), nullptr, true); }

  /// Differentiable input that references storage owned elsewhere (model
  /// parameters). `external` must outlive the tape.
  Var param(const Tensor& external, bool requires_grad = true) { return push(Tensor{}, &external, requires_grad); }

  /// Records an op result. The node requires a gradient iff any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
      needs = needs || nodes_[in.id()].requires_grad;
    }
    Var out = push(std::move(value), nullptr, needs);
    if (needs) {
      nodes_.back().backward = std::move(backward);
    }
    return out;
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external != nullptr ? *n.external : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first touch. Inside a
  /// backward closure this is a scratch buffer that is added to the node's
  /// gradient once the closure returns, so each consumer contributes a single
  /// addition regardless of how many of its inputs alias the node.
  Tensor& grad_slot(std::size_t id) {
    if (in_closure_) {
      for (auto& [sid, buf] : scratch_) {
        if (sid == id) return buf;
      }
      scratch_.emplace_back(id, Tensor(value(id).shape()));
      return scratch_.back().second;
    }
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Pointer to the gradient buffer, or null when the node needs no gradient.
  Tensor* grad_target(std::size_t id) { return requires_grad(id) ? &grad_slot(id) : nullptr; }

  const Tensor& grad(std::size_t id) {
    return grad_slot(id);
  }

  bool has_grad(std::size_t id) const { return nodes_.at(id).has_grad; }

  /// Seeds d(root)/d(root) = 1 and runs every backward closure once, newest first.
  void backward(Var root) {
    if (root.value().size() != 1) {
      throw DimensionError("backward: root must be a scalar, got " + shape_str(root.value().shape()));
    }
    grad_slot(root.id()).fill(1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) {
        continue;
      }
      in_closure_ = true;
      try {
        n.backward(*this, n.grad);
      } catch (...) {
        in_closure_ = false;
        scratch_.clear();
        throw;
      }
      in_closure_ = false;
      for (auto& [sid, buf] : scratch_) {
        Node& dst = nodes_[sid];
        if (!dst.has_grad) {
          dst.grad = std::move(buf);
          dst.has_grad = true;
        } else {
          double* d = dst.grad.ptr();
          const double* s = buf.ptr();
          for (std::size_t k = 0; k < buf.size(); ++k) d[k] += s[k];
        }
      }
      scratch_.clear();
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, const Tensor* external, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.external = external;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps node addresses stable while ops append.
  std::deque<Node> nodes_;
  bool in_closure_ = false;
  std::deque<std::pair<std::size_t, Tensor>> scratch_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Differentiable operations.

inline Var add(Var a, Var b) {
  return a.tape().record(add(a.value(), b.value()), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    for (std::size_t id : {ia, ib}) {
      if (Tensor* slot = t.grad_target(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*slot)[i] += g[i];
        }
      }
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= b.value()[i];
  }
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_target(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*ga)[i] += g[i] * bv[i];
      }
    }
    if (Tensor* gb = t.grad_target(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*gb)[i] += g[i] * av[i];
      }
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& x : out.data()) {
    x *= c;
  }
  return a.tape().record(std::move(out), {a}, [ia = a.id(), c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += c * g[i];
    }
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) {
    s += x;
  }
  return a.tape().record(Tensor::scalar(s), {a}, [ia = a.id()](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_slot(ia);
    const double gs = g[0];
    for (double& x : ga.data()) {
      x += gs;
    }
  });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
    }
  });
}

inline Var matmul(Var a, Var b) {
  return a.tape().record(matmul(a.value(), b.value()), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    matmul_backward(t.value(ia), t.value(ib), g, t.grad_target(ia), t.grad_target(ib));
  });
}

inline Var rmsnorm(Var x, Var gamma, double eps = kDefaultNormEps) {
  return x.tape().record(rmsnorm(x.value(), gamma.value(), eps), {x, gamma},
                         [ix = x.id(), ig = gamma.id(), eps](Tape& t, const Tensor& g) {
                           rmsnorm_backward(t.value(ix), t.value(ig), eps, g, t.grad_target(ix), t.grad_target(ig));
                         });
}

inline Var swiglu(Var gate, Var up) {
  return gate.tape().record(swiglu(gate.value(), up.value()), {gate, up},
                            [ig = gate.id(), iu = up.id()](Tape& t, const Tensor& g) {
                              swiglu_backward(t.value(ig), t.value(iu), g, t.grad_target(ig), t.grad_target(iu));
                            });
}

inline Var softmax_lastdim(Var x) {
  Tensor y = softmax_lastdim(x.value());
  Tape& tape = x.tape();
  // The output value lives on the tape; the closure reads it back by id.
  auto out_id = std::make_shared<std::size_t>(0);
  Var out = tape.record(std::move(y), {x}, [ix = x.id(), out_id](Tape& t, const Tensor& g) {
    softmax_lastdim_backward(t.value(*out_id), g, t.grad_slot(ix));
  });
  *out_id = out.id();
  return out;
}

inline Var embedding(Var table, std::span<const int> ids) {
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().record(embedding_lookup(table.value(), ids), {table},
                             [it = table.id(), idv = std::move(idv)](Tape& t, const Tensor& g) {
                               embedding_backward(idv, g, t.grad_slot(it));
                             });
}

inline Var rope(Var x, std::span<const std::int64_t> positions, double base) {
  std::vector<std::int64_t> pos(positions.begin(), positions.end());
  Tensor y = rope_apply(x.value(), positions, base);
  return x.tape().record(std::move(y), {x}, [ix = x.id(), pos = std::move(pos), base](Tape& t, const Tensor& g) {
    const Tensor back = rope_apply(g, pos, base, /*inverse=*/true);
    Tensor& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < back.size(); ++i) {
      gx[i] += back[i];
    }
  });
}

/// Causal attention confined to the documents of `mask` (see document_attention).
inline Var attention(Var q, Var k, Var v, const CompressedMask& mask) {
  auto cache = std::make_shared<AttentionCache>();
  Tensor y = document_attention(q.value(), k.value(), v.value(), mask, cache.get());
  return q.tape().record(std::move(y), {q, k, v},
                         [iq = q.id(), ik = k.id(), iv = v.id(), mask, cache](Tape& t, const Tensor& g) {
                           document_attention_backward(t.value(iq), t.value(ik), t.value(iv), mask, *cache, g,
                                                       t.grad_target(iq), t.grad_target(ik), t.grad_target(iv));
                         });
}

/// Weighted mean token cross-entropy: sum_i w_i * -log softmax(logits_i)[target_i] / sum_i w_i.
/// logits has shape [N, V]; targets and weights have N entries.
inline Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != targets.size() || targets.size() != weights.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(z.shape()) + " with " + std::to_string(targets.size()) +
                         " targets");
  }
  const std::size_t n = z.dim(0);
  const std::size_t vocab = z.dim(1);
  double wsum = 0.0;
  for (double w : weights) {
    wsum += w;
  }
  if (!(wsum > 0.0)) {
    throw ArgumentError("cross_entropy: weights must have a positive sum");
  }
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) {
      continue;
    }
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw ArgumentError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocab");
    }
    const double lse = detail::softmax_row(z.ptr() + i * vocab, probs.ptr() + i * vocab, vocab);
    loss += weights[i] * (lse - z.at(i, static_cast<std::size_t>(targets[i])));
  }
  loss /= wsum;
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<double> wv(weights.begin(), weights.end());
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [il = logits.id(), probs = std::move(probs), tv = std::move(tv), wv = std::move(wv), wsum](Tape& t,
                                                                                                const Tensor& g) {
        Tensor& gl = t.grad_slot(il);
        const std::size_t vocab_n = probs.dim(1);
        for (std::size_t i = 0; i < tv.size(); ++i) {
          if (wv[i] == 0.0) {
            continue;
          }
          const double c = g[0] * wv[i] / wsum;
          for (std::size_t j = 0; j < vocab_n; ++j) {
            gl.at(i, j) += c * probs.at(i, j);
          }
          gl.at(i, static_cast<std::size_t>(tv[i])) -= c;
        }
      });
}

}  // namespace trainlab
