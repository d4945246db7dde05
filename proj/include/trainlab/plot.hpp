// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "trainlab/context_parallel.hpp"
#include "trainlab/pipeline.hpp"
#include "trainlab/telemetry.hpp"
#include "trainlab/trainer.hpp"

namespace trainlab {

// Static SVG charts. Every image carries an FNV-1a hash of the data it was
// drawn from (`data-hash` attribute on the root element) so that content can
// be checked without comparing pixels.

struct LineSeries {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<LineSeries> series;
  bool log_y = false;
};

/// Hash of the chart's series in a canonical text form (names and values at
/// 17 significant digits).
inline std::string chart_data_hash(const LineChart& c) {
  std::string canon = c.log_y ? "log\n" : "lin\n";
  char buf[64];
  for (const auto& s : c.series) {
    canon += s.name + "\n";
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g\n", s.xs[i], s.ys[i]);
      canon += buf;
    }
  }
  return hex64(fnv1a64(canon));
}

inline std::string timeline_data_hash(const ScheduleTimeline& tl) {
  std::string canon;
  for (std::size_t d = 0; d < tl.devices.size(); ++d) {
    canon += "device " + std::to_string(d) + "\n";
    for (const auto& e : tl.devices[d]) {
      canon += to_string(e.kind) + " " + std::to_string(e.micro) + " " + std::to_string(e.stage) + " " +
               std::to_string(e.start) + " " + std::to_string(e.end) + "\n";
    }
  }
  return hex64(fnv1a64(canon));
}

/// Value of the `data-hash` attribute of an SVG produced here, or "" if absent.
inline std::string svg_data_hash(const std::string& svg) {
  const std::string key = "data-hash=\"";
  const auto at = svg.find(key);
  if (at == std::string::npos) return "";
  const auto end = svg.find('"', at + key.size());
  return end == std::string::npos ? "" : svg.substr(at + key.size(), end - at - key.size());
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 8];
}

inline std::vector<double> nice_ticks(double lo, double hi, int count) {
  std::vector<double> out;
  for (int i = 0; i <= count; ++i) out.push_back(lo + (hi - lo) * i / count);
  return out;
}

}  // namespace detail

inline std::string render_svg(const LineChart& c) {
  constexpr double W = 760, H = 440, L = 80, R = 170, T = 40, B = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!c.log_y || y > 0.0); };
  std::size_t points = 0;
  for (const auto& s : c.series) {
    if (s.xs.size() != s.ys.size()) throw ArgumentError("plot: series '" + s.name + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!usable(s.xs[i], s.ys[i])) continue;
      const double y = c.log_y ? std::log10(s.ys[i]) : s.ys[i];
      x0 = std::min(x0, s.xs[i]);
      x1 = std::max(x1, s.xs[i]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      ++points;
    }
  }
  if (points == 0) throw ArgumentError("plot: '" + c.title + "' has no finite points");
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) {
    const double pad = std::max(std::abs(y0) * 0.05, 0.5);
    y0 -= pad;
    y1 += pad;
  }
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"440\" viewBox=\"0 0 760 440\" data-hash=\"" +
       chart_data_hash(c) + "\">\n";
  o += "<rect width=\"760\" height=\"440\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::fmt("%.1f", L + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">" + detail::xml_escape(c.title) + "</text>\n";
  o += "<rect x=\"" + detail::fmt("%.1f", L) + "\" y=\"" + detail::fmt("%.1f", T) + "\" width=\"" +
       detail::fmt("%.1f", pw) + "\" height=\"" + detail::fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (double t : detail::nice_ticks(x0, x1, 5)) {
    o += "<text x=\"" + detail::fmt("%.1f", px(t)) + "\" y=\"" + detail::fmt("%.1f", T + ph + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + detail::fmt("%.4g", t) +
         "</text>\n";
  }
  for (double t : detail::nice_ticks(y0, y1, 5)) {
    const double label = c.log_y ? std::pow(10.0, t) : t;
    o += "<line x1=\"" + detail::fmt("%.1f", L) + "\" x2=\"" + detail::fmt("%.1f", L + pw) + "\" y1=\"" +
         detail::fmt("%.1f", py(t)) + "\" y2=\"" + detail::fmt("%.1f", py(t)) + "\" stroke=\"#ddd\"/>\n";
    o += "<text x=\"" + detail::fmt("%.1f", L - 6) + "\" y=\"" + detail::fmt("%.1f", py(t) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + detail::fmt("%.4g", label) +
         "</text>\n";
  }
  o += "<text x=\"" + detail::fmt("%.1f", L + pw / 2) + "\" y=\"" + detail::fmt("%.1f", H - 16) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + detail::xml_escape(c.x_label) +
       "</text>\n";
  o += "<text x=\"18\" y=\"" + detail::fmt("%.1f", T + ph / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"12\" transform=\"rotate(-90 18 " + detail::fmt("%.1f", T + ph / 2) + ")\">" +
       detail::xml_escape(c.y_label + (c.log_y ? " (log)" : "")) + "</text>\n";
  for (std::size_t si = 0; si < c.series.size(); ++si) {
    const auto& s = c.series[si];
    // Non-finite points break the line.
    std::string pts;
    auto flush = [&] {
      if (!pts.empty()) {
        o += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(detail::palette(si)) +
             "\" points=\"" + pts + "\"/>\n";
      }
      pts.clear();
    };
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!usable(s.xs[i], s.ys[i])) {
        flush();
        continue;
      }
      const double y = c.log_y ? std::log10(s.ys[i]) : s.ys[i];
      if (!pts.empty()) pts += ' ';
      pts += detail::fmt("%.2f", px(s.xs[i])) + "," + detail::fmt("%.2f", py(y));
    }
    flush();
    const double ly = T + 14 + 18.0 * static_cast<double>(si);
    o += "<line x1=\"" + detail::fmt("%.1f", L + pw + 12) + "\" x2=\"" + detail::fmt("%.1f", L + pw + 32) +
         "\" y1=\"" + detail::fmt("%.1f", ly) + "\" y2=\"" + detail::fmt("%.1f", ly) + "\" stroke-width=\"2\" stroke=\"" +
         detail::palette(si) + "\"/>\n";
    o += "<text x=\"" + detail::fmt("%.1f", L + pw + 38) + "\" y=\"" + detail::fmt("%.1f", ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::xml_escape(s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

/// Gantt chart of a pipeline schedule: one row per device, forward blocks
/// light, backward blocks dark, labelled with the micro-batch id.
inline std::string render_timeline_svg(const ScheduleTimeline& tl, const std::string& title) {
  if (tl.devices.empty() || tl.makespan <= 0) throw ArgumentError("plot: empty timeline");
  constexpr double L = 70, R = 20, T = 40, row = 28;
  const double W = std::max(760.0, std::min(4000.0, 12.0 * static_cast<double>(tl.makespan) + L + R));
  const double H = T + row * static_cast<double>(tl.devices.size()) + 40;
  const double scale = (W - L - R) / static_cast<double>(tl.makespan);
  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt("%.0f", W) + "\" height=\"" +
       detail::fmt("%.0f", H) + "\" viewBox=\"0 0 " + detail::fmt("%.0f", W) + " " + detail::fmt("%.0f", H) +
       "\" data-hash=\"" + timeline_data_hash(tl) + "\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::fmt("%.1f", W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" + detail::xml_escape(title) + "</text>\n";
  for (std::size_t d = 0; d < tl.devices.size(); ++d) {
    const double y = T + row * static_cast<double>(d);
    o += "<text x=\"" + detail::fmt("%.1f", L - 8) + "\" y=\"" + detail::fmt("%.1f", y + row / 2 + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">dev " + std::to_string(d) + "</text>\n";
    for (const auto& e : tl.devices[d]) {
      if (e.kind == EventKind::idle) continue;
      const double x = L + scale * static_cast<double>(e.start);
      const double w = scale * static_cast<double>(e.end - e.start);
      const double hue = e.stage >= 0 ? static_cast<double>(e.stage / static_cast<std::int64_t>(tl.devices.size())) : 0;
      const char* fill = e.kind == EventKind::fwd ? (static_cast<int>(hue) % 2 ? "#9ecae1" : "#c6dbef")
                                                   : (static_cast<int>(hue) % 2 ? "#31a354" : "#74c476");
      o += "<rect x=\"" + detail::fmt("%.2f", x) + "\" y=\"" + detail::fmt("%.1f", y + 2) + "\" width=\"" +
           detail::fmt("%.2f", w) + "\" height=\"" + detail::fmt("%.1f", row - 4) + "\" fill=\"" + fill +
           "\" stroke=\"#333\" stroke-width=\"0.5\"/>\n";
      if (w >= 10) {
        o += "<text x=\"" + detail::fmt("%.2f", x + w / 2) + "\" y=\"" + detail::fmt("%.1f", y + row / 2 + 4) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + std::to_string(e.micro) +
             "</text>\n";
      }
    }
  }
  o += "<text x=\"" + detail::fmt("%.1f", L) + "\" y=\"" + detail::fmt("%.1f", H - 12) +
       "\" font-family=\"sans-serif\" font-size=\"11\">makespan " + std::to_string(tl.makespan) + ", idle " +
       tl.idle_fraction.str() + "</text>\n";
  o += "</svg>\n";
  return o;
}

inline std::string cp_plan_data_hash(const CpPlan& plan, const CompressedMask& mask) {
  return hex64(fnv1a64(cp_plan_to_json(plan).dump() + json(mask.seq_lens()).dump()));
}

/// Ownership map of a context-parallel split: one row per rank, chunks
/// shaded by document, with each rank's workload.
inline std::string render_cp_plan_svg(const CpPlan& plan, const CompressedMask& mask, const std::string& title) {
  const std::size_t total = mask.total();
  if (total == 0 || plan.cp == 0) throw ArgumentError("plot: empty cp plan");
  constexpr double L = 70, R = 110, T = 40, row = 26;
  const double W = std::max(760.0, std::min(4000.0, 10.0 * static_cast<double>(total) + L + R));
  const double H = T + row * static_cast<double>(plan.cp) + 40;
  const double scale = (W - L - R) / static_cast<double>(total);
  std::vector<std::size_t> doc_of(total);
  {
    std::size_t pos = 0;
    for (std::size_t d = 0; d < mask.num_docs(); ++d) {
      for (std::size_t j = 0; j < mask.seq_lens()[d]; ++j) doc_of[pos++] = d;
    }
  }
  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt("%.0f", W) + "\" height=\"" +
       detail::fmt("%.0f", H) + "\" viewBox=\"0 0 " + detail::fmt("%.0f", W) + " " + detail::fmt("%.0f", H) +
       "\" data-hash=\"" + cp_plan_data_hash(plan, mask) + "\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::fmt("%.1f", W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" + detail::xml_escape(title) + "</text>\n";
  for (std::size_t r = 0; r < plan.cp; ++r) {
    const double y = T + row * static_cast<double>(r);
    o += "<text x=\"" + detail::fmt("%.1f", L - 8) + "\" y=\"" + detail::fmt("%.1f", y + row / 2 + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">rank " + std::to_string(r) + "</text>\n";
    o += "<text x=\"" + detail::fmt("%.1f", W - R + 8) + "\" y=\"" + detail::fmt("%.1f", y + row / 2 + 4) +
         "\" font-family=\"sans-serif\" font-size=\"11\">work " + std::to_string(plan.workload[r]) + "</text>\n";
  }
  for (const auto& c : plan.chunks) {
    if (c.end <= c.start) continue;
    const double y = T + row * static_cast<double>(c.rank);
    o += "<rect x=\"" + detail::fmt("%.2f", L + scale * static_cast<double>(c.start)) + "\" y=\"" +
         detail::fmt("%.1f", y + 2) + "\" width=\"" + detail::fmt("%.2f", scale * static_cast<double>(c.end - c.start)) +
         "\" height=\"" + detail::fmt("%.1f", row - 4) + "\" fill=\"" + detail::palette(doc_of[c.start]) +
         "\" fill-opacity=\"0.6\" stroke=\"#333\" stroke-width=\"0.5\"/>\n";
  }
  for (std::size_t off : mask.offsets()) {
    const double x = L + scale * static_cast<double>(off);
    o += "<line x1=\"" + detail::fmt("%.2f", x) + "\" x2=\"" + detail::fmt("%.2f", x) + "\" y1=\"" +
         detail::fmt("%.1f", T) + "\" y2=\"" + detail::fmt("%.1f", T + row * static_cast<double>(plan.cp)) +
         "\" stroke=\"#000\" stroke-dasharray=\"3,2\"/>\n";
  }
  o += "</svg>\n";
  return o;
}

// ---------------------------------------------------------------------------
// Charts built from run logs and stats tables.

using NamedRunLog = std::pair<std::string, RunLog>;

inline LineChart runlog_chart(const std::vector<NamedRunLog>& logs, const std::string& metric) {
  if (metric != "loss" && metric != "grad_norm") throw ArgumentError("plot: unknown run metric '" + metric + "'");
  LineChart c;
  c.title = metric == "loss" ? "Training loss" : "Gradient norm (before clipping)";
  c.x_label = "step";
  c.y_label = metric;
  c.log_y = metric == "grad_norm";
  for (const auto& [name, log] : logs) {
    LineSeries s{name, {}, {}};
    for (const auto& r : log.steps) {
      s.xs.push_back(static_cast<double>(r.step));
      s.ys.push_back(metric == "loss" ? r.loss : r.grad_norm);
    }
    c.series.push_back(std::move(s));
  }
  return c;
}

/// One series per site (or norm) of the given metric against layer index.
inline LineChart stats_chart(const StatsTable& t, const std::string& metric, const std::string& title) {
  LineChart c;
  c.title = title;
  c.x_label = "layer";
  c.y_label = metric;
  for (const auto& r : t.rows) {
    if (r.metric != metric) continue;
    auto it = std::find_if(c.series.begin(), c.series.end(), [&](const LineSeries& s) { return s.name == r.site; });
    if (it == c.series.end()) {
      c.series.push_back({r.site, {}, {}});
      it = c.series.end() - 1;
    }
    it->xs.push_back(static_cast<double>(r.layer));
    it->ys.push_back(r.value);
  }
  if (c.series.empty()) throw ArgumentError("plot: stats have no '" + metric + "' rows");
  return c;
}

/// Metrics present in a stats table, in first-seen order.
inline std::vector<std::string> stats_metrics(const StatsTable& t) {
  std::vector<std::string> out;
  for (const auto& r : t.rows) {
    if (std::find(out.begin(), out.end(), r.metric) == out.end()) out.push_back(r.metric);
  }
  return out;
}

}  // namespace trainlab
