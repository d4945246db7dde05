// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trainlab/data.hpp"
#include "trainlab/json_util.hpp"
#include "trainlab/model.hpp"

namespace trainlab {

inline constexpr double kSuperActivationRatio = 100.0;

/// Population statistics of a set of values. Values are sorted before any
/// summation, so the result does not depend on their order.
struct SummaryStats {
  double mean = 0.0;
  double std = 0.0;
  double top1_abs = 0.0;
  double median_abs = 0.0;
  std::size_t count = 0;
};

inline SummaryStats summarize(std::span<const double> values) {
  if (values.empty()) {
    throw ArgumentError("summarize: no values");
  }
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  SummaryStats s;
  s.count = v.size();
  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = v.front() == v.back() ? v.front() : sum / n;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double dx = v[i] - s.mean;
    sq[i] = dx * dx;
  }
  std::sort(sq.begin(), sq.end());
  double ss = 0.0;
  for (double x : sq) ss += x;
  s.std = std::sqrt(ss / n);
  std::vector<double> a(v.size());
  std::transform(v.begin(), v.end(), a.begin(), [](double x) { return std::abs(x); });
  std::sort(a.begin(), a.end());
  s.top1_abs = a.back();
  const std::size_t mid = a.size() / 2;
  s.median_abs = a.size() % 2 == 1 ? a[mid] : 0.5 * (a[mid - 1] + a[mid]);
  return s;
}

struct ActivationStat {
  std::size_t layer = 0;
  std::string site;
  SummaryStats stats;

  /// top1 |a| more than 100x the median |a| of the same tensor.
  bool super_activation() const { return stats.top1_abs > kSuperActivationRatio * stats.median_abs; }
};

struct ActivationStats {
  std::vector<ActivationStat> entries;

  const ActivationStat* find(std::size_t layer, const std::string& site) const {
    for (const auto& e : entries) {
      if (e.layer == layer && e.site == site) return &e;
    }
    return nullptr;
  }
};

inline const std::vector<ProbeSite>& default_probe_sites() {
  static const std::vector<ProbeSite> sites{ProbeSite::attn_out_proj_out, ProbeSite::ffn_down_proj_out};
  return sites;
}

inline const std::vector<ProbeSite>& all_probe_sites() {
  static const std::vector<ProbeSite> sites{ProbeSite::attn_out_proj_in, ProbeSite::attn_out_proj_out,
                                            ProbeSite::ffn_down_proj_in, ProbeSite::ffn_down_proj_out};
  return sites;
}

/// Runs one forward pass over the batch and summarizes every value seen at
/// the requested sites, per layer. Outputs of the model are not affected.
inline ActivationStats collect_activation_stats(const Model& model, const Batch& batch,
                                                const std::vector<ProbeSite>& sites = default_probe_sites()) {
  if (batch.tokens.empty()) {
    throw ArgumentError("collect_activation_stats: empty batch");
  }
  std::map<std::pair<std::size_t, int>, std::vector<double>> seen;
  ActivationProbe probe = [&](std::size_t layer, ProbeSite site, const Tensor& value) {
    if (std::find(sites.begin(), sites.end(), site) == sites.end()) return;
    auto& dst = seen[{layer, static_cast<int>(site)}];
    dst.insert(dst.end(), value.data().begin(), value.data().end());
  };
  Tape tape;
  ModelVars vars = bind_parameters(tape, model, false);
  model_forward(vars, model.config, batch.tokens, batch.mask, &probe, batch.positions);
  ActivationStats out;
  for (const auto& [key, values] : seen) {
    out.entries.push_back({key.first, to_string(static_cast<ProbeSite>(key.second)), summarize(values)});
  }
  return out;
}

struct GammaStat {
  std::size_t layer = 0;
  std::string norm;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct GammaStats {
  std::vector<GammaStat> entries;

  const GammaStat* find(std::size_t layer, const std::string& norm) const {
    for (const auto& e : entries) {
      if (e.layer == layer && e.norm == norm) return &e;
    }
    return nullptr;
  }
};

/// Mean and population std of every norm's gamma, per layer. Pre-LN models
/// have no post norms, so only pre_attn and pre_mlp are reported.
inline GammaStats collect_gamma_stats(const Model& model) {
  GammaStats out;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const DssnBlock& b = model.blocks[l];
    auto add = [&](const char* name, const Tensor& g) {
      if (g.empty()) return;
      const SummaryStats s = summarize(g.data());
      out.entries.push_back({l, name, s.mean, s.std, s.count});
    };
    add("pre_attn", b.gamma_pre_attn);
    add("post_attn", b.gamma_post_attn);
    add("pre_mlp", b.gamma_pre_mlp);
    add("post_mlp", b.gamma_post_mlp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Long-format export: one row per (layer, site, metric).

struct StatsRow {
  std::size_t layer = 0;
  std::string site;
  std::string metric;
  double value = 0.0;
  std::size_t count = 0;

  friend bool operator==(const StatsRow& a, const StatsRow& b) {
    const bool same_value = a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
    return a.layer == b.layer && a.site == b.site && a.metric == b.metric && same_value && a.count == b.count;
  }
};

struct StatsTable {
  std::vector<StatsRow> rows;
  friend bool operator==(const StatsTable&, const StatsTable&) = default;
};

inline StatsTable to_table(const ActivationStats& stats) {
  StatsTable t;
  for (const auto& e : stats.entries) {
    t.rows.push_back({e.layer, e.site, "mean", e.stats.mean, e.stats.count});
    t.rows.push_back({e.layer, e.site, "std", e.stats.std, e.stats.count});
    t.rows.push_back({e.layer, e.site, "top1_abs", e.stats.top1_abs, e.stats.count});
  }
  return t;
}

inline StatsTable to_table(const GammaStats& stats) {
  StatsTable t;
  for (const auto& e : stats.entries) {
    t.rows.push_back({e.layer, e.norm, "mean", e.mean, e.count});
    t.rows.push_back({e.layer, e.norm, "std", e.std, e.count});
  }
  return t;
}

enum class StatsFormat { csv, jsonl };

inline StatsFormat parse_stats_format(const std::string& s) {
  if (s == "csv") return StatsFormat::csv;
  if (s == "jsonl") return StatsFormat::jsonl;
  throw ArgumentError("unknown stats format '" + s + "' (expected csv or jsonl)");
}

inline StatsFormat stats_format_for(const std::string& path) {
  const auto dot = path.rfind('.');
  return parse_stats_format(dot == std::string::npos ? "" : path.substr(dot + 1));
}

inline constexpr const char* kStatsCsvHeader = "layer,site,metric,value,count";

namespace detail {

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  const auto used = static_cast<std::size_t>(end - s.c_str());
  if (s.empty() || used != s.size()) {
    throw IoError(where + ": bad number '" + s + "'");
  }
  return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw IoError(where + ": bad count '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace detail

inline std::string stats_to_csv(const StatsTable& t) {
  std::string out = std::string(kStatsCsvHeader) + "\n";
  for (const auto& r : t.rows) {
    if (r.site.find_first_of(",\n") != std::string::npos || r.metric.find_first_of(",\n") != std::string::npos) {
      throw ArgumentError("stats site/metric names may not contain commas or newlines");
    }
    out += std::to_string(r.layer) + "," + r.site + "," + r.metric + "," + detail::format_g17(r.value) + "," +
           std::to_string(r.count) + "\n";
  }
  return out;
}

inline std::string stats_to_jsonl(const StatsTable& t) {
  std::string out;
  for (const auto& r : t.rows) {
    // JSON has no inf/nan literals.
    json j{{"layer", r.layer}, {"site", r.site}, {"metric", r.metric}, {"count", r.count}};
    if (std::isfinite(r.value)) {
      j["value"] = r.value;
    } else {
      j["value"] = detail::format_g17(r.value);
    }
    out += j.dump() + "\n";
  }
  return out;
}

inline StatsTable stats_from_csv(const std::string& text, const std::string& source = "stats") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kStatsCsvHeader) {
    throw IoError(source + ": missing header '" + kStatsCsvHeader + "'");
  }
  StatsTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    const std::string where = source + ":" + std::to_string(lineno);
    if (cells.size() != 5) {
      throw IoError(where + ": expected 5 columns, got " + std::to_string(cells.size()));
    }
    t.rows.push_back({detail::parse_count(cells[0], where), cells[1], cells[2], detail::parse_double(cells[3], where),
                      detail::parse_count(cells[4], where)});
  }
  return t;
}

inline StatsTable stats_from_jsonl(const std::string& text, const std::string& source = "stats") {
  std::istringstream in(text);
  std::string line;
  StatsTable t;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      StatsRow r;
      r.layer = j.at("layer").get<std::size_t>();
      r.site = j.at("site").get<std::string>();
      r.metric = j.at("metric").get<std::string>();
      r.count = j.at("count").get<std::size_t>();
      const json& v = j.at("value");
      r.value = v.is_string() ? detail::parse_double(v.get<std::string>(), where) : v.get<double>();
      t.rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError(where + ": " + e.what());
    }
  }
  return t;
}

inline void export_stats(const StatsTable& t, const std::string& path, StatsFormat format) {
  write_text_file(path, format == StatsFormat::csv ? stats_to_csv(t) : stats_to_jsonl(t));
}

inline StatsTable load_stats(const std::string& path, StatsFormat format) {
  const std::string text = read_text_file(path);
  return format == StatsFormat::csv ? stats_from_csv(text, path) : stats_from_jsonl(text, path);
}

}  // namespace trainlab
