// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "trainlab/errors.hpp"

namespace trainlab {

/// Robust loss-spike rule: step t is flagged when
///   loss[t] > median(prev w) + k * 1.4826 * MAD(prev w).
/// Non-finite losses are always flagged.
struct SpikeDetector {
  std::size_t window = 50;
  double k = 6.0;

  void validate() const {
    if (window < 2) throw ConfigError("spike detector window must be at least 2");
    if (!(k > 0.0)) throw ConfigError("spike detector threshold k must be positive");
  }
};

struct SpikeEvent {
  std::size_t step = 0;
  double loss = 0.0;
  double median = 0.0;
  double threshold = 0.0;
};

inline constexpr double kMadToStd = 1.4826;

namespace detail {

inline double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Scans the series with a trailing window. Series no longer than the window
/// produce no events.
inline std::vector<SpikeEvent> detect_spikes(std::span<const double> losses, const SpikeDetector& det = {}) {
  det.validate();
  std::vector<SpikeEvent> events;
  std::vector<double> win(det.window);
  std::vector<double> dev(det.window);
  for (std::size_t t = det.window; t < losses.size(); ++t) {
    std::copy(losses.begin() + static_cast<std::ptrdiff_t>(t - det.window),
              losses.begin() + static_cast<std::ptrdiff_t>(t), win.begin());
    const double med = detail::median_of(win);
    for (std::size_t i = 0; i < det.window; ++i) dev[i] = std::abs(win[i] - med);
    const double mad = detail::median_of(dev);
    const double threshold = med + det.k * kMadToStd * mad;
    if (!std::isfinite(losses[t]) || losses[t] > threshold) {
      events.push_back({t, losses[t], med, threshold});
    }
  }
  return events;
}

}  // namespace trainlab
