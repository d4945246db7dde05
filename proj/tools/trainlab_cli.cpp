// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "trainlab/trainlab.hpp"

namespace fs = std::filesystem;
using namespace trainlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitDiverged = 3;

void emit_json(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text_file(out, text);
    std::cerr << "wrote " << out << "\n";
  }
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

json ratio_json(const Rational& r) {
  return {{"exact", r.str()}, {"value", r.to_double()}, {"rounded", round6(r.to_double())}};
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string out = "runs";
  std::int64_t max_steps = -1;
  std::int64_t log_every = 100;
  bool dry_run = false;
  std::vector<std::string> only;
};

int cmd_run(const RunArgs& a) {
  Preset preset = load_preset(a.config);
  if (!a.only.empty()) {
    std::vector<ExperimentConfig> keep;
    for (const auto& c : preset.runs) {
      if (std::find(a.only.begin(), a.only.end(), c.name) != a.only.end()) keep.push_back(c);
    }
    if (keep.empty()) throw ArgumentError("--only matched no run of preset '" + preset.name + "'");
    preset.runs = keep;
  }
  if (a.dry_run) {
    json runs = json::array();
    for (const auto& c : preset.runs) runs.push_back({{"config_hash", config_hash(c)}, {"config", c}});
    emit_json({{"preset", preset.name}, {"runs", runs}}, "");
    return kExitOk;
  }
  configure_allocator();
  auto hooks = [&](const ExperimentConfig& c) {
    RunHooks h;
    h.max_steps = a.max_steps;
    if (a.log_every > 0) {
      h.on_step = [&a, name = c.name](const StepRecord& r, const Model&) {
        if ((r.step + 1) % a.log_every == 0) {
          std::fprintf(stderr, "[%s] step %lld loss %.4f grad_norm %.4f lr %.3g\n", name.c_str(),
                       static_cast<long long>(r.step + 1), r.loss, r.grad_norm, r.lr);
        }
      };
    }
    return h;
  };
  const auto results = run_preset(preset, a.out, hooks);
  bool diverged = false;
  std::printf("%-16s %-10s %7s %12s %12s %7s\n", "run", "status", "steps", "final_loss", "gn_cv", "spikes");
  for (const auto& r : results) {
    const auto& s = r.summary;
    std::printf("%-16s %-10s %7zu %12.5f %12.5f %7zu\n", s.name.c_str(), s.status.c_str(), s.steps, s.final_loss,
                s.grad_norm_cv, s.spike_steps.size());
    diverged |= s.status == "diverged";
  }
  const fs::path top = results.size() == 1 ? results.front().dir : results.front().dir.parent_path();
  std::printf("artifacts: %s\n", top.string().c_str());
  return diverged ? kExitDiverged : kExitOk;
}

// ---------------------------------------------------------------------------

struct PpArgs {
  std::string spec;
  std::int64_t p = 0, v = 1, n = 0;
  std::int64_t fwd = 1, bwd = 2;
  std::string layer_costs;
  std::string out;
  std::string timeline;
  bool events = false;
};

std::vector<std::int64_t> parse_int_list(const std::string& s, const char* what) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const long long v = std::strtoll(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0') throw ArgumentError(std::string(what) + ": bad integer '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ArgumentError(std::string(what) + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ArgumentError(std::string(what) + ": bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ArgumentError(std::string(what) + ": empty list");
  return out;
}

int cmd_simulate_pp(const PpArgs& a) {
  PipelineSpec spec;
  std::vector<std::int64_t> layer_costs;
  if (!a.spec.empty()) {
    if (a.p != 0 || a.n != 0) throw ArgumentError("simulate-pp: give either --spec or --p/--n, not both");
    json j = read_json_file(a.spec);
    if (j.is_object() && j.contains("layer_costs")) {
      layer_costs = j.at("layer_costs").get<std::vector<std::int64_t>>();
      j.erase("layer_costs");
    }
    spec = pipeline_spec_from_json(j, a.spec);
  } else {
    if (a.p < 1 || a.n < 1) throw ArgumentError("simulate-pp needs --p and --n (or --spec)");
    spec = PipelineSpec::uniform(a.p, a.v, a.n, a.fwd, a.bwd);
  }
  if (!a.layer_costs.empty()) layer_costs = parse_int_list(a.layer_costs, "--layer-costs");
  spec.validate();

  const ScheduleTimeline tl = simulate_schedule(spec);
  const auto issues = validate_timeline(spec, tl);
  const Rational closed = bubble_ratio_interleaved_exact(spec.p, spec.v, spec.n);
  json out = {{"p", spec.p},
              {"v", spec.v},
              {"n", spec.n},
              {"schedule", spec.v == 1 ? "1f1b" : "interleaved"},
              {"bubble_ratio", ratio_json(closed)},
              {"bubble_ratio_1f1b", ratio_json(bubble_ratio_1f1b_exact(spec.p, spec.n))},
              {"simulated",
               {{"makespan", tl.makespan},
                {"busy", tl.busy},
                {"idle_fraction", ratio_json(tl.idle_fraction)},
                {"matches_closed_form", tl.idle_fraction == closed},
                {"valid", issues.empty()}}}};
  if (!issues.empty()) out["simulated"]["issues"] = issues;
  if (a.events) out["simulated"]["devices"] = timeline_to_json(tl);
  if (!layer_costs.empty()) {
    const StageAssignment st = balance_stages(layer_costs, spec.p, spec.v, spec.n);
    out["stage_balance"] = {{"group_sizes", st.group_sizes},
                            {"group_costs", st.group_costs},
                            {"max_cost", st.max_cost},
                            {"idle_fraction", ratio_json(st.idle_fraction)}};
  }
  if (!a.timeline.empty()) {
    const std::string title = "p=" + std::to_string(spec.p) + " v=" + std::to_string(spec.v) +
                              " n=" + std::to_string(spec.n);
    write_text_file(a.timeline, render_timeline_svg(tl, title));
    std::cerr << "wrote " << a.timeline << "\n";
  }
  emit_json(out, a.out);
  return issues.empty() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

struct CpArgs {
  std::string spec;
  std::string lens;
  std::size_t cp = 0;
  std::string strategy = "balanced_subseq";
  std::string out;
  std::string timeline;
};

int cmd_partition_cp(const CpArgs& a) {
  std::vector<std::size_t> lens;
  std::size_t cp = a.cp;
  std::string strategy = a.strategy;
  if (!a.spec.empty()) {
    if (!a.lens.empty() || a.cp != 0) throw ArgumentError("partition-cp: give either --spec or --lens/--cp, not both");
    const json j = read_json_file(a.spec);
    JsonReader r(j, a.spec);
    r.get("seq_lens", lens, true);
    r.get("cp", cp, true);
    r.get("strategy", strategy);
    r.finish();
  } else {
    for (std::int64_t v : parse_int_list(a.lens, "--lens")) {
      if (v < 1) throw ArgumentError("--lens: document lengths must be positive");
      lens.push_back(static_cast<std::size_t>(v));
    }
  }
  if (cp < 1) throw ArgumentError("partition-cp needs --cp >= 1");
  for (std::size_t len : lens) {
    if (len < 1) throw ArgumentError("document lengths must be positive");
  }
  const CompressedMask mask(lens);
  const CpPlan plan = cp_partition(mask, cp, parse_cp_strategy(strategy));
  json out = cp_plan_to_json(plan);
  out["seq_lens"] = lens;
  out["total_pairs"] = causal_pair_count(mask);
  const auto [lo, hi] = std::minmax_element(plan.workload.begin(), plan.workload.end());
  out["max_workload"] = *hi;
  out["balanced"] = *lo == *hi;
  out["imbalance"] = *lo == 0 ? json(nullptr) : json(static_cast<double>(*hi) / static_cast<double>(*lo));
  if (!a.timeline.empty()) {
    write_text_file(a.timeline, render_cp_plan_svg(plan, mask, "cp=" + std::to_string(cp) + " " + strategy));
    std::cerr << "wrote " << a.timeline << "\n";
  }
  emit_json(out, a.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct VocabArgs {
  std::string manifest;
  std::string out;
};

int cmd_build_vocab(const VocabArgs& a) {
  const BuiltVocab v = build_vocab(load_vocab_manifest(a.manifest));
  const json j = v.to_json();
  std::fprintf(stderr, "%-24s %8s %8s\n", "domain", "tokens", "percent");
  for (const auto& row : v.unified.provenance()) {
    std::fprintf(stderr, "%-24s %8zu %7.2f%%\n", row.domain.c_str(), row.count, row.percent);
  }
  std::fprintf(stderr, "%-24s %8zu\n", "total", v.unified.size());
  emit_json(j, a.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string checkpoint;
  std::string kind = "all";
  std::string out_dir = ".";
  std::string format = "csv";
  std::string sites;
  std::size_t rows = 2;
  std::size_t seq_len = 64;
  std::uint64_t data_seed = 1;
};

int cmd_stats(const StatsArgs& a) {
  if (a.kind != "all" && a.kind != "gamma" && a.kind != "activations") {
    throw ArgumentError("--kind must be all, gamma or activations");
  }
  const StatsFormat fmt = parse_stats_format(a.format);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  fs::create_directories(a.out_dir);
  const std::string ext = fmt == StatsFormat::csv ? ".csv" : ".jsonl";
  if (a.kind != "activations") {
    const fs::path p = fs::path(a.out_dir) / ("gamma" + ext);
    export_stats(to_table(collect_gamma_stats(ck.model)), p.string(), fmt);
    std::cerr << "wrote " << p.string() << "\n";
  }
  if (a.kind != "gamma") {
    std::vector<ProbeSite> sites = default_probe_sites();
    if (!a.sites.empty()) {
      sites.clear();
      std::stringstream ss(a.sites);
      std::string s;
      while (std::getline(ss, s, ',')) sites.push_back(parse_probe_site(s));
    }
    MotifCorpusSpec data;
    data.vocab_size = ck.model.config.vocab_size;
    data.seed = a.data_seed;
    MotifCorpus corpus(data);
    const Batch batch = *corpus.next(a.rows, a.seq_len);
    const fs::path p = fs::path(a.out_dir) / ("activations" + ext);
    export_stats(to_table(collect_activation_stats(ck.model, batch, sites)), p.string(), fmt);
    std::cerr << "wrote " << p.string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> inputs;
  std::string out_dir = ".";
};

bool looks_like_runlog(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      return j.is_object() && j.contains("step") && j.contains("loss");
    } catch (const json::exception&) {
      return false;
    }
  }
  return false;
}

/// Series label for a file: its stem, or for `<run>/logs/runlog.jsonl` the run name.
std::string series_name(const fs::path& p) {
  if (p.stem() == "runlog" && p.parent_path().filename() == "logs" && p.parent_path().has_parent_path()) {
    return p.parent_path().parent_path().filename().string();
  }
  return p.stem().string();
}

int cmd_plot(const PlotArgs& a) {
  fs::create_directories(a.out_dir);
  std::vector<NamedRunLog> logs;
  std::vector<fs::path> written;
  for (const auto& in : a.inputs) {
    const fs::path p(in);
    const std::string text = read_text_file(in);
    if (p.extension() == ".csv" || (p.extension() == ".jsonl" && !looks_like_runlog(text))) {
      const StatsTable t = p.extension() == ".csv" ? stats_from_csv(text, in) : stats_from_jsonl(text, in);
      for (const auto& m : stats_metrics(t)) {
        const fs::path dst = fs::path(a.out_dir) / (p.stem().string() + "_" + m + ".svg");
        if (write_chart(stats_chart(t, m, p.stem().string() + " " + m + " by layer"), dst)) written.push_back(dst);
      }
    } else if (p.extension() == ".jsonl") {
      logs.emplace_back(series_name(p), RunLog::from_jsonl(text));
    } else {
      throw ArgumentError("plot: cannot tell what '" + in + "' holds (expected .jsonl run log or .csv/.jsonl stats)");
    }
  }
  if (!logs.empty()) {
    for (const char* metric : {"loss", "grad_norm"}) {
      const fs::path dst = fs::path(a.out_dir) / (std::string(metric) + ".svg");
      if (write_chart(runlog_chart(logs, metric), dst)) written.push_back(dst);
    }
  }
  if (written.empty()) throw ArgumentError("plot: inputs contain nothing finite to draw");
  for (const auto& w : written) std::cout << w.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct NiahArgs {
  std::string checkpoint;
  std::size_t len = 256;
  std::size_t cases = 20;
  std::string depths = "0,0.25,0.5,0.75,1";
  std::uint64_t seed = 1;
  double rope_base = 0.0;
  std::string sweep;
  std::string out;
  // training
  std::string train_out;
  std::uint64_t train_seed = 1;
};

int cmd_niah(const NiahArgs& a) {
  const NiahTaskSpec task;
  const auto depths = parse_double_list(a.depths, "--depths");
  if (!a.train_out.empty()) {
    configure_allocator();
    NiahTrainConfig c;
    c.seed = a.train_seed;
    RunLog log;
    const Model m = train_niah_model(c, &log, [](const StepRecord& r, const Model&) {
      if ((r.step + 1) % 250 == 0) {
        std::fprintf(stderr, "step %lld len %zu loss %.4f\n", static_cast<long long>(r.step + 1), r.seq_len, r.loss);
      }
    });
    save_checkpoint(a.train_out, m, {{"task", "niah"}, {"trained_len", c.trained_len()}, {"seed", c.seed}});
    std::cerr << "wrote " << a.train_out << "\n";
    if (a.checkpoint.empty()) return kExitOk;
  }
  if (a.checkpoint.empty()) throw ArgumentError("niah needs a checkpoint (or --train-out)");
  Model model = load_checkpoint(a.checkpoint).model;
  if (a.rope_base > 0.0) model.config.rope_base = a.rope_base;
  if (a.sweep.empty()) {
    emit_json(niah_result_to_json(niah_probe(model, task, a.len, a.cases, depths, a.seed)), a.out);
    return kExitOk;
  }
  const auto bases = parse_double_list(a.sweep, "--sweep");
  const RopeBaseSweep s = select_rope_base(with_rope_base(model), bases, task, a.len, a.cases, depths, a.seed);
  json j = rope_sweep_to_json(s);
  j["context_len"] = a.len;
  emit_json(j, a.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trainlab: desk-scale training-stability, parallelism and tokenizer experiments"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", "trainlab 0.1.0");

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Train an experiment or every variant of a preset");
  c_run->add_option("config", run.config, "Experiment or preset JSON file")->required()->check(CLI::ExistingFile);
  c_run->add_option("--out", run.out, "Root directory for run directories")->capture_default_str();
  c_run->add_option("--max-steps", run.max_steps, "Stop each run after this many steps (-1: no cap)");
  c_run->add_option("--log-every", run.log_every, "Progress line interval in steps (0: silent)")->capture_default_str();
  c_run->add_option("--only", run.only, "Run only these variants of the preset");
  c_run->add_flag("--dry-run", run.dry_run, "Validate and print the resolved configs without training");

  PpArgs pp;
  auto* c_pp = app.add_subcommand("simulate-pp", "Pipeline bubble ratio: closed form and event simulation");
  c_pp->add_option("--spec", pp.spec, "JSON spec {p, v, n, fwd_cost, bwd_cost, layer_costs}")->check(CLI::ExistingFile);
  c_pp->add_option("--p", pp.p, "Pipeline stages");
  c_pp->add_option("--v", pp.v, "Virtual stages per device (1: plain 1F1B)")->capture_default_str();
  c_pp->add_option("--n", pp.n, "Micro-batches");
  c_pp->add_option("--fwd-cost", pp.fwd, "Forward cost per virtual stage")->capture_default_str();
  c_pp->add_option("--bwd-cost", pp.bwd, "Backward cost per virtual stage")->capture_default_str();
  c_pp->add_option("--layer-costs", pp.layer_costs, "Comma-separated per-layer costs to balance over p*v stages");
  c_pp->add_option("--out", pp.out, "Write JSON here instead of stdout");
  c_pp->add_option("--timeline", pp.timeline, "Write a Gantt-style SVG of the simulated schedule");
  c_pp->add_flag("--events", pp.events, "Include every simulated event in the JSON");

  CpArgs cpa;
  auto* c_cp = app.add_subcommand("partition-cp", "Context-parallel split of a packed sequence and per-rank work");
  c_cp->add_option("--spec", cpa.spec, "JSON spec {seq_lens, cp, strategy}")->check(CLI::ExistingFile);
  c_cp->add_option("--lens", cpa.lens, "Comma-separated document lengths");
  c_cp->add_option("--cp", cpa.cp, "Context-parallel ranks");
  c_cp->add_option("--strategy", cpa.strategy, "naive | megatron_2cp | balanced_subseq")->capture_default_str();
  c_cp->add_option("--out", cpa.out, "Write JSON here instead of stdout");
  c_cp->add_option("--timeline", cpa.timeline, "Write an SVG of chunk ownership per rank");

  VocabArgs va;
  auto* c_vocab = app.add_subcommand("build-vocab", "Train per-domain BPE and merge into one vocabulary");
  c_vocab->add_option("manifest", va.manifest, "Manifest JSON {specials, domains: [{domain, path, target_size}]}")
      ->required()
      ->check(CLI::ExistingFile);
  c_vocab->add_option("--out", va.out, "Write the vocab file here instead of stdout");

  StatsArgs sa;
  auto* c_stats = app.add_subcommand("stats", "Export gamma and activation statistics of a checkpoint");
  c_stats->add_option("checkpoint", sa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_stats->add_option("--kind", sa.kind, "all | gamma | activations")->capture_default_str();
  c_stats->add_option("--out-dir", sa.out_dir, "Output directory")->capture_default_str();
  c_stats->add_option("--format", sa.format, "csv | jsonl")->capture_default_str();
  c_stats->add_option("--sites", sa.sites, "Comma-separated probe sites (default attn_out_proj,ffn_down_proj)");
  c_stats->add_option("--rows", sa.rows, "Rows of the synthetic probe batch")->capture_default_str();
  c_stats->add_option("--seq-len", sa.seq_len, "Row length of the probe batch")->capture_default_str();
  c_stats->add_option("--data-seed", sa.data_seed, "Seed of the probe batch corpus")->capture_default_str();

  PlotArgs pa;
  auto* c_plot = app.add_subcommand("plot", "Render SVG charts from run logs and stats files");
  c_plot->add_option("inputs", pa.inputs, "runlog .jsonl files (overlaid) and/or stats .csv/.jsonl files")
      ->required()
      ->check(CLI::ExistingFile);
  c_plot->add_option("--out-dir", pa.out_dir, "Directory for the SVG files")->capture_default_str();

  NiahArgs na;
  auto* c_niah = app.add_subcommand("niah", "Needle-in-a-haystack retrieval probe and RoPE base sweep");
  c_niah->add_option("checkpoint", na.checkpoint, "Checkpoint of a model trained on the retrieval task");
  c_niah->add_option("--len", na.len, "Context length")->capture_default_str();
  c_niah->add_option("--cases", na.cases, "Cases per depth")->capture_default_str();
  c_niah->add_option("--depths", na.depths, "Comma-separated needle depths in [0, 1]")->capture_default_str();
  c_niah->add_option("--seed", na.seed, "Case generator seed")->capture_default_str();
  c_niah->add_option("--rope-base", na.rope_base, "Override the model's RoPE base");
  c_niah->add_option("--sweep", na.sweep, "Comma-separated RoPE bases; report each and the best");
  c_niah->add_option("--out", na.out, "Write JSON here instead of stdout");
  c_niah->add_option("--train-out", na.train_out, "Train the desk retrieval model first and save it here");
  c_niah->add_option("--train-seed", na.train_seed, "Seed for --train-out")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (c_run->parsed()) return cmd_run(run);
    if (c_pp->parsed()) return cmd_simulate_pp(pp);
    if (c_cp->parsed()) return cmd_partition_cp(cpa);
    if (c_vocab->parsed()) return cmd_build_vocab(va);
    if (c_stats->parsed()) return cmd_stats(sa);
    if (c_plot->parsed()) return cmd_plot(pa);
    if (c_niah->parsed()) return cmd_niah(na);
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  std::cerr << app.help();
  return kExitInvalid;
}
