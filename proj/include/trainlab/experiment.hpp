// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "trainlab/checkpoint.hpp"
#include "trainlab/data.hpp"
#include "trainlab/plot.hpp"
#include "trainlab/spike.hpp"
#include "trainlab/telemetry.hpp"
#include "trainlab/trainer.hpp"

namespace trainlab {

inline ProbeSite parse_probe_site(const std::string& s) {
  for (ProbeSite p : all_probe_sites()) {
    if (to_string(p) == s) return p;
  }
  throw ArgumentError("unknown probe site '" + s +
                      "' (expected attn_out_proj, attn_out_proj.input, ffn_down_proj or ffn_down_proj.input)");
}

struct TelemetryConfig {
  std::vector<ProbeSite> sites = default_probe_sites();
  bool gamma = true;
  std::int64_t stats_every = 0;       // 0 = final stats only
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::size_t eval_rows = 2;          // rows of the fixed batch used for activation stats
  SpikeDetector spike;
  bool plots = true;

  friend bool operator==(const TelemetryConfig& a, const TelemetryConfig& b) {
    return a.sites == b.sites && a.gamma == b.gamma && a.stats_every == b.stats_every &&
           a.checkpoint_every == b.checkpoint_every && a.eval_rows == b.eval_rows && a.spike.window == b.spike.window &&
           a.spike.k == b.spike.k && a.plots == b.plots;
  }
};

inline void to_json(json& j, const TelemetryConfig& t) {
  json sites = json::array();
  for (ProbeSite s : t.sites) sites.push_back(to_string(s));
  j = {{"sites", sites},
       {"gamma", t.gamma},
       {"stats_every", t.stats_every},
       {"checkpoint_every", t.checkpoint_every},
       {"eval_rows", t.eval_rows},
       {"spike_window", t.spike.window},
       {"spike_k", t.spike.k},
       {"plots", t.plots}};
}

inline TelemetryConfig telemetry_from_json(const json& j, const std::string& path = "telemetry") {
  TelemetryConfig t;
  JsonReader r(j, path);
  if (r.has("sites")) {
    std::vector<std::string> names;
    r.get("sites", names);
    t.sites.clear();
    for (const auto& n : names) {
      try {
        t.sites.push_back(parse_probe_site(n));
      } catch (const ArgumentError& e) {
        throw ConfigError(path + ".sites: " + e.what());
      }
    }
  }
  r.get("gamma", t.gamma);
  r.get("stats_every", t.stats_every);
  r.get("checkpoint_every", t.checkpoint_every);
  r.get("eval_rows", t.eval_rows);
  r.get("spike_window", t.spike.window);
  r.get("spike_k", t.spike.k);
  r.get("plots", t.plots);
  r.finish();
  if (t.stats_every < 0 || t.checkpoint_every < 0) throw ConfigError(path + ": intervals must be non-negative");
  if (t.eval_rows < 1) throw ConfigError(path + ".eval_rows: must be positive");
  try {
    t.spike.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return t;
}

/// One training run. The seed drives weight init and, unless data.seed is
/// given, the synthetic corpus.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  ModelConfig model;
  PhasePlan plan;
  OptimHyper optim;
  MotifCorpusSpec data;
  TelemetryConfig telemetry;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline void to_json(json& j, const ExperimentConfig& c) {
  j = {{"name", c.name},   {"seed", c.seed}, {"model", c.model},         {"plan", c.plan},
       {"optim", c.optim}, {"data", c.data}, {"telemetry", c.telemetry}};
}

inline ExperimentConfig experiment_from_json(const json& j, const std::string& path = "") {
  ExperimentConfig c;
  JsonReader r(j, path);
  auto sub = [&](const char* key) { return path.empty() ? std::string(key) : path + "." + key; };
  r.get("name", c.name, true);
  r.get("seed", c.seed, true);
  c.model = model_config_from_json(r.child("model"), sub("model"));
  c.plan = phase_plan_from_json(r.child("plan"), sub("plan"));
  if (r.has("optim")) c.optim = optim_hyper_from_json(r.child("optim"), sub("optim"));
  json data = r.has("data") ? r.child("data") : json::object();
  if (!data.contains("seed")) data["seed"] = c.seed;
  if (!data.contains("vocab_size")) data["vocab_size"] = c.model.vocab_size;
  c.data = motif_spec_from_json(data, sub("data"));
  if (r.has("telemetry")) c.telemetry = telemetry_from_json(r.child("telemetry"), sub("telemetry"));
  r.finish();
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError(sub("name") + ": must be non-empty and contain no path separators");
  }
  if (c.data.vocab_size > c.model.vocab_size) {
    throw ConfigError(sub("data.vocab_size") + ": exceeds model.vocab_size");
  }
  for (const auto& p : c.plan.phases) {
    if (p.seq_len > c.model.max_seq_len) {
      throw ConfigError(sub("plan") + ": phase '" + p.name + "' seq_len exceeds model.max_seq_len");
    }
  }
  return c;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(json(c).dump())).substr(0, 12); }

// ---------------------------------------------------------------------------
// Preset files: either one experiment object, or
//   {"preset": name, "base": {...}, "variants": [{"name": ..., "override": {...}}]}
// where every variant is the base with its override applied as a JSON merge
// patch.

struct Preset {
  std::string name;
  std::vector<ExperimentConfig> runs;
};

inline Preset preset_from_json(const json& j) {
  Preset p;
  if (!j.is_object()) throw ConfigError("config: expected an object");
  if (!j.contains("variants")) {
    p.runs.push_back(experiment_from_json(j));
    p.name = p.runs.front().name;
    return p;
  }
  JsonReader r(j, "");
  r.get("preset", p.name, true);
  const json& base = r.child("base");
  const json& variants = r.child("variants");
  r.finish();
  if (!variants.is_array() || variants.empty()) throw ConfigError("variants: expected a non-empty array");
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const std::string where = "variants[" + std::to_string(i) + "]";
    JsonReader vr(variants[i], where);
    std::string name;
    vr.get("name", name, true);
    json patch = vr.has("override") ? vr.child("override") : json::object();
    vr.finish();
    json merged = base;
    merged.merge_patch(patch);
    merged["name"] = name;
    p.runs.push_back(experiment_from_json(merged, where));
    for (std::size_t k = 0; k + 1 < p.runs.size(); ++k) {
      if (p.runs[k].name == name) throw ConfigError(where + ".name: duplicate variant '" + name + "'");
    }
  }
  return p;
}

inline Preset load_preset(const std::string& path) { return preset_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Run directories:
//   <root>/<name>-<config hash>-<UTC timestamp>/
//     config.json  summary.json
//     logs/runlog.jsonl
//     stats/activations-step<N>.csv  stats/gamma-step<N>.csv
//     ckpt/step<N>.ckpt  ckpt/final.ckpt
//     plots/*.svg

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// Creates a fresh directory <root>/<stem>-<timestamp>, adding a numeric
/// suffix if that name is taken.
inline std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& stem) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  const std::string base = stem + "-" + utc_timestamp();
  fs::path dir = root / base;
  for (int i = 2; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

inline void make_run_layout(const std::filesystem::path& dir) {
  for (const char* sub : {"logs", "stats", "ckpt", "plots"}) {
    std::error_code ec;
    std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
}

struct RunSummary {
  std::string name;
  std::string config_hash;
  std::string status;
  std::string message;
  std::size_t steps = 0;
  double final_loss = 0.0;
  std::size_t nonfinite_losses = 0;
  double grad_norm_cv = 0.0;
  std::vector<std::size_t> spike_steps;
};

inline void to_json(json& j, const RunSummary& s) {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  j = {{"name", s.name},
       {"config_hash", s.config_hash},
       {"status", s.status},
       {"message", s.message},
       {"steps", s.steps},
       {"final_loss", num(s.final_loss)},
       {"nonfinite_losses", s.nonfinite_losses},
       {"grad_norm_cv", num(s.grad_norm_cv)},
       {"spike_events", s.spike_steps.size()},
       {"spike_steps", s.spike_steps}};
}

inline RunSummary summarize_run(const ExperimentConfig& c, const RunLog& log) {
  RunSummary s;
  s.name = c.name;
  s.config_hash = config_hash(c);
  s.status = log.status;
  s.message = log.message;
  s.steps = log.steps.size();
  const auto losses = log.losses();
  s.final_loss = losses.empty() ? std::numeric_limits<double>::quiet_NaN() : losses.back();
  for (double l : losses) s.nonfinite_losses += std::isfinite(l) ? 0 : 1;
  std::vector<double> gn;
  for (double g : log.grad_norms()) {
    if (std::isfinite(g)) gn.push_back(g);
  }
  s.grad_norm_cv = gn.empty() ? std::numeric_limits<double>::quiet_NaN() : coefficient_of_variation(gn);
  for (const auto& e : detect_spikes(losses, c.telemetry.spike)) s.spike_steps.push_back(e.step);
  return s;
}

struct RunResult {
  std::filesystem::path dir;
  RunLog log;
  RunSummary summary;
};

struct RunHooks {
  StepObserver on_step;
  std::int64_t max_steps = -1;
};

/// Fixed batch for activation statistics, drawn from an independent stream
/// of the same corpus.
inline Batch stats_batch(const ExperimentConfig& c) {
  MotifCorpusSpec spec = c.data;
  spec.seed = c.data.seed ^ 0x5eed5eed5eed5eedULL;
  spec.max_tokens = 0;
  MotifCorpus corpus(spec);
  return *corpus.next(c.telemetry.eval_rows, c.plan.phases.front().seq_len);
}

inline void write_stats(const ExperimentConfig& c, const Model& model, const Batch& batch,
                        const std::filesystem::path& dir, std::int64_t step) {
  const std::string tag = "-step" + std::to_string(step) + ".csv";
  if (!c.telemetry.sites.empty()) {
    export_stats(to_table(collect_activation_stats(model, batch, c.telemetry.sites)),
                 (dir / "stats" / ("activations" + tag)).string(), StatsFormat::csv);
  }
  if (c.telemetry.gamma) {
    export_stats(to_table(collect_gamma_stats(model)), (dir / "stats" / ("gamma" + tag)).string(), StatsFormat::csv);
  }
}

/// Writes the chart unless it has nothing finite to draw.
inline bool write_chart(const LineChart& chart, const std::filesystem::path& path) {
  std::string svg;
  try {
    svg = render_svg(chart);
  } catch (const ArgumentError&) {
    return false;
  }
  write_text_file(path.string(), svg);
  return true;
}

inline void write_run_plots(const ExperimentConfig& c, const RunLog& log, const Model& model, const Batch& batch,
                            const std::filesystem::path& dir) {
  if (log.steps.empty()) return;
  const std::vector<NamedRunLog> one{{c.name, log}};
  auto emit = [&](const LineChart& chart, const std::string& file) { write_chart(chart, dir / "plots" / file); };
  emit(runlog_chart(one, "loss"), "loss.svg");
  emit(runlog_chart(one, "grad_norm"), "grad_norm.svg");
  if (c.telemetry.gamma) {
    const StatsTable g = to_table(collect_gamma_stats(model));
    emit(stats_chart(g, "mean", "Norm gamma mean by layer"), "gamma_mean.svg");
    emit(stats_chart(g, "std", "Norm gamma std by layer"), "gamma_std.svg");
  }
  if (!c.telemetry.sites.empty()) {
    const StatsTable a = to_table(collect_activation_stats(model, batch, c.telemetry.sites));
    for (const auto& m : stats_metrics(a)) emit(stats_chart(a, m, "Activation " + m + " by layer"), "activation_" + m + ".svg");
  }
}

/// Trains one experiment and writes its artifacts into `dir` (created with
/// the standard layout).
inline RunResult run_experiment_in(const ExperimentConfig& c, const std::filesystem::path& dir,
                                   const RunHooks& hooks = {}) {
  make_run_layout(dir);
  write_text_file((dir / "config.json").string(), json(c).dump(2) + "\n");
  Model model = build_model(c.model, c.seed);
  MotifCorpus data(c.data);
  const Batch eval = stats_batch(c);
  TrainOptions opt;
  opt.optim = c.optim;
  opt.max_steps = hooks.max_steps;
  opt.on_step = [&](const StepRecord& rec, const Model& m) {
    const std::int64_t done = rec.step + 1;
    if (c.telemetry.stats_every > 0 && done % c.telemetry.stats_every == 0) write_stats(c, m, eval, dir, done);
    if (c.telemetry.checkpoint_every > 0 && done % c.telemetry.checkpoint_every == 0) {
      save_checkpoint((dir / "ckpt" / ("step" + std::to_string(done) + ".ckpt")).string(), m,
                      {{"step", done}, {"config_hash", config_hash(c)}});
    }
    if (hooks.on_step) hooks.on_step(rec, m);
  };
  RunResult res;
  res.dir = dir;
  res.log = run_phase_plan(c.plan, model, data, opt);
  const auto steps = static_cast<std::int64_t>(res.log.steps.size());
  write_text_file((dir / "logs" / "runlog.jsonl").string(), res.log.to_jsonl());
  res.summary = summarize_run(c, res.log);
  write_text_file((dir / "summary.json").string(), json(res.summary).dump(2) + "\n");
  if (res.log.status != "diverged") {
    write_stats(c, model, eval, dir, steps);
    save_checkpoint((dir / "ckpt" / "final.ckpt").string(), model, {{"step", steps}, {"config_hash", config_hash(c)}});
    if (c.telemetry.plots) write_run_plots(c, res.log, model, eval, dir);
  } else if (c.telemetry.plots) {
    write_chart(runlog_chart({{c.name, res.log}}, "loss"), dir / "plots" / "loss.svg");
  }
  return res;
}

/// Runs every experiment of a preset. A single experiment gets its own run
/// directory; a multi-variant preset gets one directory with a subdirectory
/// per variant plus overlay plots and a combined summary.
inline std::vector<RunResult> run_preset(const Preset& p, const std::filesystem::path& root,
                                         const std::function<RunHooks(const ExperimentConfig&)>& hooks_for = {}) {
  std::vector<RunResult> out;
  auto hooks = [&](const ExperimentConfig& c) { return hooks_for ? hooks_for(c) : RunHooks{}; };
  if (p.runs.size() == 1) {
    const auto& c = p.runs.front();
    out.push_back(run_experiment_in(c, make_run_dir(root, c.name + "-" + config_hash(c)), hooks(c)));
    return out;
  }
  std::string all;
  for (const auto& c : p.runs) all += config_hash(c);
  const auto top = make_run_dir(root, p.name + "-" + hex64(fnv1a64(all)).substr(0, 12));
  json summaries = json::array();
  std::vector<NamedRunLog> logs;
  for (const auto& c : p.runs) {
    out.push_back(run_experiment_in(c, top / c.name, hooks(c)));
    summaries.push_back(out.back().summary);
    logs.emplace_back(c.name, out.back().log);
  }
  write_text_file((top / "summary.json").string(), json{{"preset", p.name}, {"runs", summaries}}.dump(2) + "\n");
  std::filesystem::create_directories(top / "plots");
  for (const char* metric : {"loss", "grad_norm"}) {
    write_chart(runlog_chart(logs, metric), top / "plots" / (std::string(metric) + ".svg"));
  }
  return out;
}

}  // namespace trainlab
