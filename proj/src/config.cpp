#include "ridg/config.hpp"

#include <fstream>
#include <sstream>

#include "ridg/errors.hpp"

namespace ridg {

using nlohmann::json;

namespace {

json default_values() {
  const TrainConfig t;
  const SyntheticShiftConfig s;
  const HpRanges h;
  return json{
      {"data.preset", "two_blobs"},
      {"data.csv", ""},
      {"data.name", ""},
      {"data.classes", s.class_count},
      {"data.domains", s.domain_count},
      {"data.samples_per_domain", s.samples_per_domain},
      {"data.strength", 0.9},
      {"data.strengths", json::array()},
      {"data.noise", s.noise},
      {"data.core_signal", s.core_signal},
      {"data.spurious_scale", s.spurious_scale},
      {"data.spurious_noise", s.spurious_noise},
      {"data.domain_shift", s.domain_shift},
      {"data.spurious_spread", s.spurious_spread},
      {"data.spurious_domain_spread", s.spurious_domain_spread},
      {"data.nuisance_dims", s.nuisance_dims},
      {"model.hidden", t.hidden},
      {"model.feature_dim", t.feature_dim},
      {"train.variant", to_string(t.variant)},
      {"train.alpha", t.alpha},
      {"train.momentum", t.momentum},
      {"train.batch_size", t.batch_size},
      {"train.steps", t.steps},
      {"train.lr", t.lr},
      {"train.optimizer", to_string(t.optimizer)},
      {"train.beta1", t.beta1},
      {"train.beta2", t.beta2},
      {"train.eps", t.eps},
      {"train.normalization", to_string(t.normalization)},
      {"train.mean_init", to_string(t.mean_init)},
      {"train.eval_interval", t.eval_interval},
      {"train.sampling", to_string(t.sampling)},
      {"run.seed", 0},
      {"run.holdout_domain", -1},
      {"run.trials", 5},
      {"run.jobs", 1},
      {"run.train_fraction", 0.8},
      {"run.method", ""},
      {"sweep.alpha_min", h.alpha.lo},
      {"sweep.alpha_max", h.alpha.hi},
      {"sweep.momentum_min", h.momentum.lo},
      {"sweep.momentum_max", h.momentum.hi},
      {"sweep.lr_min", h.lr.lo},
      {"sweep.lr_max", h.lr.hi},
      {"sweep.batch_min", h.batch_size.lo},
      {"sweep.batch_max", h.batch_size.hi},
  };
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

}  // namespace

RunSettings::RunSettings() : values_(default_values()) {}

void RunSettings::set(std::string_view key, const json& value,
                      std::string_view source) {
  const std::string k(key);
  const auto it = values_.find(k);
  if (it == values_.end()) {
    throw ConfigError("unknown config key '" + k + "'");
  }
  json v = value;
  if (v.is_string() && !it->is_string()) {
    try {
      v = json::parse(v.get<std::string>());
    } catch (const json::exception&) {
      throw ConfigError("config key '" + k + "' expects " + it->type_name() +
                        ", got '" + value.get<std::string>() + "'");
    }
  }
  if (!same_kind(*it, v)) {
    throw ConfigError("config key '" + k + "' expects " + it->type_name() +
                      ", got " + v.type_name());
  }
  if (it->is_number_integer() && v.is_number_float()) {
    throw ConfigError("config key '" + k + "' expects an integer, got " +
                      v.dump());
  }
  if (it->is_number_unsigned() && v.is_number_integer() &&
      v.get<long long>() < 0) {
    throw ConfigError("config key '" + k + "' must be >= 0");
  }
  *it = v;
  composition_.push_back(std::string(source) + ": " + k + "=" + v.dump());
}

void RunSettings::set_text(std::string_view key, std::string_view text,
                           std::string_view source) {
  set(key, json(std::string(text)), source);
}

void RunSettings::merge_file(const std::filesystem::path& path) {
  const json doc = read_json(path);
  if (!doc.is_object()) {
    throw ConfigError("config file " + path.string() +
                      " must hold one flat JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    set(key, value, "file " + path.string());
  }
}

void RunSettings::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) +
                      "' is not key=value");
  }
  set_text(assignment.substr(0, eq), assignment.substr(eq + 1), "--set");
}

TrainConfig RunSettings::train_config() const {
  TrainConfig t;
  t.variant = parse_variant(get<std::string>("train.variant"));
  t.alpha = get<double>("train.alpha");
  t.momentum = get<double>("train.momentum");
  t.batch_size = get<std::size_t>("train.batch_size");
  t.steps = get<std::size_t>("train.steps");
  t.lr = get<double>("train.lr");
  t.optimizer = parse_optimizer(get<std::string>("train.optimizer"));
  t.beta1 = get<double>("train.beta1");
  t.beta2 = get<double>("train.beta2");
  t.eps = get<double>("train.eps");
  t.seed = seed();
  t.normalization =
      parse_normalization(get<std::string>("train.normalization"));
  t.mean_init = parse_mean_init(get<std::string>("train.mean_init"));
  t.eval_interval = get<std::size_t>("train.eval_interval");
  t.sampling = parse_sampling(get<std::string>("train.sampling"));
  t.hidden = get<std::vector<std::size_t>>("model.hidden");
  t.feature_dim = get<std::size_t>("model.feature_dim");
  t.validate();
  return t;
}

SyntheticShiftConfig RunSettings::shift_config(std::size_t flipped_domain) const {
  SyntheticShiftConfig s;
  s.generator = parse_generator(get<std::string>("data.preset"));
  s.class_count = get<std::size_t>("data.classes");
  s.domain_count = get<std::size_t>("data.domains");
  s.samples_per_domain = get<std::size_t>("data.samples_per_domain");
  auto strengths = get<std::vector<double>>("data.strengths");
  if (strengths.empty()) {
    strengths.assign(s.domain_count, get<double>("data.strength"));
  }
  s.strengths = std::move(strengths);
  s.flipped_domain = flipped_domain;
  s.noise = get<double>("data.noise");
  s.core_signal = get<double>("data.core_signal");
  s.spurious_scale = get<double>("data.spurious_scale");
  s.spurious_noise = get<double>("data.spurious_noise");
  s.domain_shift = get<double>("data.domain_shift");
  s.spurious_spread = get<double>("data.spurious_spread");
  s.spurious_domain_spread = get<double>("data.spurious_domain_spread");
  s.nuisance_dims = get<std::size_t>("data.nuisance_dims");
  s.seed = stream_seed(seed(), "data");
  s.validate();
  return s;
}

HpRanges RunSettings::hp_ranges() const {
  HpRanges h;
  h.alpha = {get<double>("sweep.alpha_min"), get<double>("sweep.alpha_max")};
  h.momentum = {get<double>("sweep.momentum_min"),
                get<double>("sweep.momentum_max")};
  h.lr = {get<double>("sweep.lr_min"), get<double>("sweep.lr_max")};
  h.batch_size = {get<double>("sweep.batch_min"),
                  get<double>("sweep.batch_max")};
  return h;
}

std::string RunSettings::dataset_name() const {
  auto name = get<std::string>("data.name");
  if (!name.empty()) return name;
  const auto csv = get<std::string>("data.csv");
  if (!csv.empty()) return std::filesystem::path(csv).stem().string();
  return get<std::string>("data.preset");
}

DomainDataset load_dataset(const RunSettings& settings, std::size_t holdout) {
  const auto csv = settings.get<std::string>("data.csv");
  if (!csv.empty()) return load_csv(csv);
  return generate(settings.shift_config(holdout));
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"alpha", c.alpha},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"lr", c.lr},
              {"optimizer", to_string(c.optimizer)},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"seed", c.seed},
              {"normalization", to_string(c.normalization)},
              {"mean_init", to_string(c.mean_init)},
              {"eval_interval", c.eval_interval},
              {"sampling", to_string(c.sampling)},
              {"precision", to_string(c.precision)},
              {"hidden", c.hidden},
              {"feature_dim", c.feature_dim}};
}

namespace {

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.alpha = j.at("alpha").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.normalization = parse_normalization(j.at("normalization").get<std::string>());
  c.mean_init = parse_mean_init(j.at("mean_init").get<std::string>());
  c.eval_interval = j.at("eval_interval").get<std::size_t>();
  c.sampling = parse_sampling(j.at("sampling").get<std::string>());
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  return c;
}

}  // namespace

json result_to_json(const TrialResult& r) {
  json evals = json::array();
  for (const auto& e : r.evals) {
    evals.push_back({{"step", e.step},
                     {"train_acc", e.train_acc},
                     {"val_acc", e.val_acc},
                     {"target_acc", e.target_acc}});
  }
  std::size_t max_singletons = 0, singleton_steps = 0;
  // columnar trace; L_inv is null on the ERM path
  json trace = {{"step", json::array()},          {"L_cla", json::array()},
                {"L_inv", json::array()},         {"L_all", json::array()},
                {"scd_rationale", json::array()}, {"scd_feature", json::array()},
                {"scd_logit", json::array()},     {"singleton_classes", json::array()}};
  for (const auto& t : r.trace) {
    max_singletons = std::max(max_singletons, t.singleton_classes);
    singleton_steps += t.singleton_classes > 0;
    trace["step"].push_back(t.step);
    trace["L_cla"].push_back(t.loss_cla);
    trace["L_inv"].push_back(t.loss_inv ? json(*t.loss_inv) : json(nullptr));
    trace["L_all"].push_back(t.loss_all);
    trace["scd_rationale"].push_back(t.scd.rationale);
    trace["scd_feature"].push_back(t.scd.feature);
    trace["scd_logit"].push_back(t.scd.logit);
    trace["singleton_classes"].push_back(t.singleton_classes);
  }
  return json{{"method", r.method},
              {"dataset", r.dataset},
              {"holdout_domain", r.holdout_domain},
              {"trial_index", r.trial_index},
              {"split_seed", r.split_seed},
              {"config", train_config_to_json(r.config)},
              {"selected_step", r.selected_step},
              {"selected_val_acc", r.selected_val_acc},
              {"selected_target_acc", r.selected_target_acc},
              {"wall_seconds", r.wall_seconds},
              {"steps_with_singleton_classes", singleton_steps},
              {"max_singleton_classes", max_singletons},
              {"evals", evals},
              {"trace", trace}};
}

TrialResult result_from_json(const json& j) {
  TrialResult r;
  r.method = j.at("method").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.holdout_domain = j.at("holdout_domain").get<std::size_t>();
  r.trial_index = j.at("trial_index").get<std::size_t>();
  r.split_seed = j.at("split_seed").get<std::uint64_t>();
  r.config = train_config_from_json(j.at("config"));
  r.selected_step = j.at("selected_step").get<std::size_t>();
  r.selected_val_acc = j.at("selected_val_acc").get<double>();
  r.selected_target_acc = j.at("selected_target_acc").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  for (const auto& e : j.at("evals")) {
    r.evals.push_back({e.at("step").get<std::size_t>(),
                       e.at("train_acc").get<double>(),
                       e.at("val_acc").get<double>(),
                       e.at("target_acc").get<double>()});
  }
  if (j.contains("trace")) {
    const auto& t = j.at("trace");
    const auto& steps = t.at("step");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      TraceRow row;
      row.step = steps[i].get<std::size_t>();
      row.loss_cla = t.at("L_cla")[i].get<double>();
      if (!t.at("L_inv")[i].is_null()) row.loss_inv = t.at("L_inv")[i].get<double>();
      row.loss_all = t.at("L_all")[i].get<double>();
      row.scd = {t.at("scd_rationale")[i].get<double>(),
                 t.at("scd_feature")[i].get<double>(),
                 t.at("scd_logit")[i].get<double>()};
      row.singleton_classes = t.at("singleton_classes")[i].get<std::size_t>();
      r.trace.push_back(row);
    }
  }
  return r;
}

void write_trace_csv(const TrialResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "step,L_cla,L_inv,L_all,scd_rationale,scd_feature,scd_logit,val_acc,"
         "target_acc\n";
  std::size_t e = 0;
  for (const auto& t : r.trace) {
    out << t.step << ',' << t.loss_cla << ',';
    if (t.loss_inv) out << *t.loss_inv;
    out << ',' << t.loss_all << ',' << t.scd.rationale << ',' << t.scd.feature
        << ',' << t.scd.logit << ',';
    while (e < r.evals.size() && r.evals[e].step < t.step) ++e;
    if (e < r.evals.size() && r.evals[e].step == t.step) {
      out << r.evals[e].val_acc << ',' << r.evals[e].target_acc;
    } else {
      out << ',';
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

json make_manifest(std::string_view command, const RunSettings& settings,
                   Precision precision) {
  return json{{"code_version", kCodeVersion},
              {"command", command},
              {"precision", to_string(precision)},
              {"seed", settings.seed()},
              {"config", settings.values()},
              {"composition", settings.composition()}};
}

void write_json(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace ridg
