// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trainlab/autograd.hpp"

namespace trainlab {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Scalar-valued composition over any number of differentiable inputs.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central finite differences at
/// every coordinate of every input. rel_err = |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& points, double step = 1e-5,
                                  double tol = 1e-4) {
  if (!(step > 0.0)) {
    throw ArgumentError("grad_check: step must be positive");
  }
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> inputs;
    for (const Tensor& p : points) {
      inputs.push_back(tape.leaf(p));
    }
    Var out = f(tape, inputs);
    tape.backward(out);
    for (const Var& in : inputs) {
      analytic.push_back(in.grad());
    }
  }
  auto evaluate = [&](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> inputs;
    for (const Tensor& p : at) {
      inputs.push_back(tape.constant(p));
    }
    return f(tape, inputs).value().item();
  };

  GradCheckReport report;
  std::vector<Tensor> probe = points;
  for (std::size_t in = 0; in < points.size(); ++in) {
    for (std::size_t i = 0; i < points[in].size(); ++i) {
      const double a = analytic[in][i];
      if (!std::isfinite(a)) {
        throw NumericError("grad_check: non-finite analytic gradient at input " + std::to_string(in) + ", index " +
                           std::to_string(i));
      }
      const double x0 = points[in][i];
      probe[in][i] = x0 + step;
      const double fp = evaluate(probe);
      probe[in][i] = x0 - step;
      const double fm = evaluate(probe);
      probe[in][i] = x0;
      const double n = (fp - fm) / (2.0 * step);
      if (!std::isfinite(n)) {
        throw NumericError("grad_check: non-finite finite difference at input " + std::to_string(in) + ", index " +
                           std::to_string(i));
      }
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
      ++report.coordinates;
      if (rel > report.max_rel_err || report.coordinates == 1) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
        report.worst_input = in;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = n;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

inline GradCheckReport grad_check(const std::function<Var(Var)>& f, const Tensor& point, double step = 1e-5,
                                  double tol = 1e-4) {
  return grad_check([&f](Tape&, std::span<const Var> in) { return f(in[0]); }, std::vector<Tensor>{point}, step,
                    tol);
}

}  // namespace trainlab
