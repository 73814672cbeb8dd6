#include "ridg/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ridg/config.hpp"
#include "ridg/errors.hpp"
#include "ridg/rationale.hpp"
#include "ridg/report.hpp"

namespace ridg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Values of the shared flags; unset optionals leave the config untouched.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
  std::optional<std::string> variant;
  std::optional<double> alpha;
  std::optional<double> momentum;
  std::optional<std::string> normalization;
  std::optional<std::string> mean_init;
  std::optional<std::size_t> trials;
  std::optional<long long> holdout;
  std::optional<std::string> preset;
  std::optional<std::string> data;
  std::optional<std::size_t> steps;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "flat JSON config file");
  cmd->add_option("--seed", f.seed, "master seed for every RNG stream");
  cmd->add_option("--jobs", f.jobs, "worker threads for trials");
  cmd->add_option("--out", f.out, "output file or directory");
  cmd->add_option("--variant", f.variant,
                  "rationale|feature|logit|feature_plus_logit|"
                  "rationale_zero_target|none");
  cmd->add_option("--alpha", f.alpha, "invariance weight");
  cmd->add_option("--momentum", f.momentum, "class-mean momentum");
  cmd->add_option("--normalization", f.normalization)
      ->check(CLI::IsMember({"element_mean", "eq3"}));
  cmd->add_option("--mean-init", f.mean_init)
      ->check(CLI::IsMember({"first_batch", "zeros", "frozen_init"}));
  cmd->add_option("--trials", f.trials, "trials per held-out domain");
  cmd->add_option("--holdout-domain", f.holdout,
                  "held-out domain (-1: every domain for sweep/ablate)");
  cmd->add_option("--preset", f.preset,
                  "two_blobs|rotated_moons|nuisance_dims");
  cmd->add_option("--data", f.data, "CSV dataset instead of a preset");
  cmd->add_option("--steps", f.steps, "training steps");
  cmd->add_option("--set", f.overrides, "key=value config override")
      ->allow_extra_args(false);
}

// defaults < --config file < named flags < --set overrides (in order).
RunSettings compose(const CommonFlags& f) {
  RunSettings s;
  if (!f.config.empty()) s.merge_file(f.config);
  const std::string src = "flag";
  if (f.seed) s.set("run.seed", *f.seed, src);
  if (f.jobs) s.set("run.jobs", *f.jobs, src);
  if (f.variant) s.set("train.variant", *f.variant, src);
  if (f.alpha) {
    s.set("train.alpha", *f.alpha, src);
    s.set("sweep.alpha_min", *f.alpha, src);
    s.set("sweep.alpha_max", *f.alpha, src);
  }
  if (f.momentum) {
    s.set("train.momentum", *f.momentum, src);
    s.set("sweep.momentum_min", *f.momentum, src);
    s.set("sweep.momentum_max", *f.momentum, src);
  }
  if (f.normalization) s.set("train.normalization", *f.normalization, src);
  if (f.mean_init) s.set("train.mean_init", *f.mean_init, src);
  if (f.trials) s.set("run.trials", *f.trials, src);
  if (f.holdout) s.set("run.holdout_domain", *f.holdout, src);
  if (f.preset) s.set("data.preset", *f.preset, src);
  if (f.data) s.set("data.csv", *f.data, src);
  if (f.steps) s.set("train.steps", *f.steps, src);
  for (const auto& o : f.overrides) s.apply_override(o);
  return s;
}

Precision env_precision() {
  const char* v = std::getenv("RIDG_PRECISION");
  return v && *v ? parse_precision(v) : Precision::f64;
}

std::size_t single_holdout(const RunSettings& s) {
  const auto h = s.get<long long>("run.holdout_domain");
  return h < 0 ? 0 : static_cast<std::size_t>(h);
}

std::vector<std::size_t> holdouts(const RunSettings& s,
                                  const DomainDataset& probe) {
  const auto h = s.get<long long>("run.holdout_domain");
  std::vector<std::size_t> out;
  if (h >= 0) {
    out.push_back(static_cast<std::size_t>(h));
  } else {
    for (std::size_t d = 0; d < probe.domain_count; ++d) out.push_back(d);
  }
  return out;
}

void log_composition(const RunSettings& s, std::ostream& err) {
  for (const auto& line : s.composition()) err << "config " << line << '\n';
}

fs::path out_dir(const CommonFlags& f, std::string_view fallback) {
  fs::path dir = f.out.empty() ? fs::path(fallback) : fs::path(f.out);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------- commands

int cmd_generate(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  RunSettings s = compose(f);
  log_composition(s, err);
  if (f.out.empty()) throw ConfigError("generate needs --out");
  const DomainDataset ds = generate(s.shift_config(single_holdout(s)));
  if (fs::path(f.out).has_parent_path()) {
    fs::create_directories(fs::path(f.out).parent_path());
  }
  write_csv(ds, f.out);
  out << "wrote " << ds.size() << " samples (" << ds.domain_count
      << " domains, " << ds.class_count << " classes, " << ds.feature_dim
      << " features) to " << f.out << '\n';
  return 0;
}

template <typename Real>
int train_impl(const RunSettings& s, const CommonFlags& f, Precision precision,
               std::ostream& out) {
  const std::size_t holdout = single_holdout(s);
  const DomainDataset ds = load_dataset(s, holdout);
  TrainConfig tc = s.train_config();
  tc.precision = precision;
  const SplitPlan plan{holdout, stream_seed(s.seed(), "split"),
                       s.get<double>("run.train_fraction")};
  const TrialData data = make_trial_data(ds, plan);
  auto outcome = train_model<Real>(tc, data);
  TrialResult& r = outcome.result;
  const auto method = s.get<std::string>("run.method");
  if (!method.empty()) r.method = method;
  r.dataset = s.dataset_name();
  r.holdout_domain = holdout;
  r.split_seed = plan.seed;

  const fs::path dir = out_dir(f, "runs/train");
  const json manifest = make_manifest("train", s, precision);
  write_json(manifest, dir / "manifest.json");
  write_json(result_to_json(r), dir / "result.json");
  write_trace_csv(r, dir / "trace.csv");
  save_checkpoint(outcome.selected_model, dir / "model.json");
  const auto scaler =
      Standardizer::fit(ds, source_indices(ds, holdout));
  write_json(json{{"mean", scaler.mean}, {"scale", scaler.scale}},
             dir / "standardizer.json");
  out << std::fixed << std::setprecision(2) << r.method << " holdout "
      << holdout << ": val " << r.selected_val_acc << "% target "
      << r.selected_target_acc << "% (step " << r.selected_step << ") -> "
      << dir.string() << '\n';
  return 0;
}

int cmd_train(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  RunSettings s = compose(f);
  log_composition(s, err);
  const Precision p = env_precision();
  return p == Precision::f32 ? train_impl<float>(s, f, p, out)
                             : train_impl<double>(s, f, p, out);
}

struct MethodPlan {
  std::string name;
  TrainConfig config;
  HpRanges ranges;
};

std::vector<TrialResult> run_methods(const RunSettings& s,
                                     const std::vector<MethodPlan>& methods,
                                     std::ostream& err) {
  const std::string dataset = s.dataset_name();
  const DomainDataset probe = load_dataset(s, 0);
  std::vector<TrialResult> all;
  for (std::size_t h : holdouts(s, probe)) {
    const DomainDataset ds = load_dataset(s, h);
    for (const auto& m : methods) {
      SweepOptions opt;
      opt.holdout = h;
      opt.n_trials = s.get<std::size_t>("run.trials");
      opt.ranges = m.ranges;
      opt.master_seed = s.seed();
      opt.train_fraction = s.get<double>("run.train_fraction");
      opt.jobs = s.get<std::size_t>("run.jobs");
      opt.method = m.name;
      opt.dataset = dataset;
      auto results = run_trials(m.config, ds, opt);
      double mean = 0;
      for (const auto& r : results) mean += r.selected_target_acc;
      err << "holdout " << h << " " << m.name << ": mean target "
          << std::fixed << std::setprecision(2)
          << mean / static_cast<double>(results.size()) << "%\n";
      all.insert(all.end(), results.begin(), results.end());
    }
  }
  return all;
}

std::vector<TrialRecord> to_records(const std::vector<TrialResult>& results) {
  std::vector<TrialRecord> records;
  for (const auto& r : results) {
    records.push_back({r.method, r.dataset, r.holdout_domain, r.trial_index,
                       r.selected_target_acc});
  }
  return records;
}

void print_summaries(const std::vector<MethodSummary>& summaries,
                     std::ostream& out) {
  out << "method,dataset,mean,std,score\n";
  for (const auto& m : summaries)
    for (const auto& d : m.datasets)
      out << m.method << ',' << d.dataset << ',' << std::fixed
          << std::setprecision(1) << d.mean << ',' << d.stddev << ','
          << d.score << '\n';
}

int finish_sweep(const RunSettings& s, const CommonFlags& f,
                 std::string_view command, Precision precision,
                 const std::vector<TrialResult>& results, std::ostream& out,
                 bool domain_table) {
  const fs::path dir = out_dir(f, "runs/" + std::string(command));
  const json manifest = make_manifest(command, s, precision);
  const std::string tag = content_hash(manifest.dump());
  write_json(manifest, dir / ("manifest_" + tag + ".json"));
  json arr = json::array();
  for (const auto& r : results) arr.push_back(result_to_json(r));
  write_json(arr, dir / ("results_" + tag + ".json"));
  const auto records = to_records(results);
  const auto summaries = summarize(std::span<const TrialRecord>(records));
  export_tables(summaries, dir, tag);
  if (domain_table) {
    export_domain_table(summaries, s.dataset_name(),
                        dir / ("ablation_" + tag + ".csv"));
  }
  print_summaries(summaries, out);
  return 0;
}

int cmd_sweep(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  RunSettings s = compose(f);
  log_composition(s, err);
  const Precision p = env_precision();
  TrainConfig base = s.train_config();
  base.precision = p;
  auto name = s.get<std::string>("run.method");
  if (name.empty()) name = method_label(base);
  const auto results = run_methods(s, {{name, base, s.hp_ranges()}}, err);
  return finish_sweep(s, f, "sweep", p, results, out, false);
}

int cmd_ablate(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  RunSettings s = compose(f);
  log_composition(s, err);
  const Precision p = env_precision();
  TrainConfig base = s.train_config();
  base.precision = p;
  const HpRanges ranges = s.hp_ranges();
  auto with = [&](std::string name, Variant v,
                  std::function<void(MethodPlan&)> tweak = {}) {
    MethodPlan m{std::move(name), base, ranges};
    m.config.variant = v;
    if (tweak) tweak(m);
    return m;
  };
  const std::vector<MethodPlan> methods{
      with("ERM", Variant::none),
      with("W/ fea.", Variant::feature),
      with("W/ log.", Variant::logit),
      with("W/ fea.&log.", Variant::feature_plus_logit),
      with("W/ m=0", Variant::rationale,
           [](MethodPlan& m) {
             m.ranges.momentum = {0.0, 0.0};
             m.config.mean_init = MeanInit::frozen_init;
           }),
      with("W/ m=1", Variant::rationale,
           [](MethodPlan& m) { m.ranges.momentum = {1.0, 1.0}; }),
      with("W/ R=0", Variant::rationale_zero_target),
      with("Ours", Variant::rationale),
  };
  const auto results = run_methods(s, methods, err);
  return finish_sweep(s, f, "ablate", p, results, out, true);
}

void collect_results(const fs::path& path, std::vector<TrialResult>& into) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && e.path().extension() == ".json" &&
          (name == "result.json" || name.rfind("results_", 0) == 0)) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) collect_results(file, into);
    return;
  }
  const json doc = read_json(path);
  if (doc.is_array()) {
    for (const auto& j : doc) into.push_back(result_from_json(j));
  } else {
    into.push_back(result_from_json(doc));
  }
}

int cmd_report(const CommonFlags& f, const std::vector<std::string>& inputs,
               std::ostream& out, std::ostream& err) {
  RunSettings s = compose(f);
  log_composition(s, err);
  if (inputs.empty()) throw ConfigError("report needs at least one --in");
  std::vector<TrialResult> results;
  for (const auto& in : inputs) {
    if (!fs::exists(in)) throw IoError("no such input: " + in);
    collect_results(in, results);
  }
  if (results.empty()) throw AggregationError("no trial results found");
  const auto records = to_records(results);
  const auto summaries = summarize(std::span<const TrialRecord>(records));
  json manifest = make_manifest("report", s, env_precision());
  manifest["inputs"] = inputs;
  const std::string tag = content_hash(manifest.dump());
  const fs::path dir = out_dir(f, "runs/report");
  write_json(manifest, dir / ("manifest_" + tag + ".json"));
  export_tables(summaries, dir, tag);
  print_summaries(summaries, out);
  return 0;
}

template <typename Real>
int export_impl(const fs::path& run, const CommonFlags& f, std::ostream& out) {
  const json manifest = read_json(run / "manifest.json");
  RunSettings s;
  for (const auto& [key, value] : manifest.at("config").items()) {
    s.set(key, value, "manifest");
  }
  if (f.data) s.set("data.csv", *f.data, "flag");
  const std::size_t holdout = single_holdout(s);
  const DomainDataset raw = load_dataset(s, holdout);
  const json sj = read_json(run / "standardizer.json");
  const Standardizer scaler{sj.at("mean").get<std::vector<double>>(),
                            sj.at("scale").get<std::vector<double>>()};
  if (scaler.mean.size() != raw.feature_dim) {
    throw DimensionError("standardizer has " +
                         std::to_string(scaler.mean.size()) +
                         " features, dataset has " +
                         std::to_string(raw.feature_dim));
  }
  const DomainDataset ds = scaler.apply(raw);
  const Model<Real> model = load_checkpoint<Real>(run / "model.json");
  std::vector<Real> x(ds.features.begin(), ds.features.end());
  Tape<Real> tape;
  const auto z = forward_features(
      model, tape, Tensor<Real>::constant({ds.size(), ds.feature_dim}, x));
  const auto r = build_rationale(tape, z.detach(), model.head.weight().detach());
  if (f.out.empty()) throw ConfigError("export-rationales needs --out");
  if (fs::path(f.out).has_parent_path()) {
    fs::create_directories(fs::path(f.out).parent_path());
  }
  write_rationale_csv<Real>(f.out, r, ds.labels, ds.domains);
  out << "wrote " << ds.size() << " rationale rows (" << r.dim(2) << "x"
      << r.dim(0) << ") to " << f.out << '\n';
  return 0;
}

int cmd_export(const CommonFlags& f, const std::string& run, std::ostream& out) {
  if (run.empty()) throw ConfigError("export-rationales needs --run");
  return env_precision() == Precision::f32 ? export_impl<float>(run, f, out)
                                           : export_impl<double>(run, f, out);
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Rationale-invariance training, ablation and reporting", "ridg"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::vector<std::string> report_inputs;
  std::string run_dir;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset CSV");
  auto* train = app.add_subcommand("train", "train one model");
  auto* sweep = app.add_subcommand("sweep", "random hyperparameter trials");
  auto* ablate = app.add_subcommand("ablate", "run the ablation matrix");
  auto* report = app.add_subcommand("report", "summarize trial results");
  auto* exp = app.add_subcommand("export-rationales",
                                 "write per-sample rationale matrices");
  for (auto* cmd : {gen, train, sweep, ablate, report, exp}) {
    add_common(cmd, flags);
  }
  report->add_option("--in", report_inputs, "result files or run directories")
      ->required();
  exp->add_option("--run", run_dir, "directory written by `train`")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(flags, out, err);
    if (*train) return cmd_train(flags, out, err);
    if (*sweep) return cmd_sweep(flags, out, err);
    if (*ablate) return cmd_ablate(flags, out, err);
    if (*report) return cmd_report(flags, report_inputs, out, err);
    if (*exp) return cmd_export(flags, run_dir, out);
  } catch (const ConfigError& e) {
    err << "ridg: error: config: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "ridg: error: runtime: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ridg
