#include "ridg/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "ridg/errors.hpp"
#include "ridg/optim.hpp"

namespace ridg {

Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + std::string(s) +
                    "' (expected f32 or f64)");
}

std::string_view to_string(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

std::string_view to_string(OptimizerKind o) {
  return o == OptimizerKind::adam ? "adam" : "sgd";
}

Sampling parse_sampling(std::string_view s) {
  if (s == "pooled") return Sampling::pooled;
  if (s == "stratified") return Sampling::stratified;
  throw ConfigError("unknown sampling '" + std::string(s) + "'");
}

std::string_view to_string(Sampling s) {
  return s == Sampling::pooled ? "pooled" : "stratified";
}

void TrainConfig::validate() const {
  if (!(alpha >= 0) || !std::isfinite(alpha)) {
    throw ConfigError("alpha must be finite and >= 0");
  }
  if (!(momentum >= 0 && momentum <= 1)) {
    throw ConfigError("momentum must lie in [0, 1]");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ConfigError("adam epsilon must be > 0");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  for (std::size_t w : hidden) {
    if (w < 1) throw ConfigError("hidden widths must be >= 1");
  }
}

std::uint64_t stream_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index) {
  std::uint64_t tag = 14695981039346656037ull;  // FNV-1a
  for (char c : stream) {
    tag ^= static_cast<unsigned char>(c);
    tag *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(master),
                    static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(tag),
                    static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

TrialData make_trial_data(const DomainDataset& ds, const SplitPlan& plan) {
  const DomainSplit split = leave_one_out_splits(ds, plan);
  const auto source = source_indices(ds, plan.held_out_domain);
  const DomainDataset scaled = Standardizer::fit(ds, source).apply(ds);
  return {scaled.subset(split.train), scaled.subset(split.val),
          scaled.subset(split.target)};
}

std::string method_label(const TrainConfig& config) {
  switch (config.variant) {
    case Variant::none: return "ERM";
    case Variant::feature: return "W/ fea.";
    case Variant::logit: return "W/ log.";
    case Variant::feature_plus_logit: return "W/ fea.&log.";
    case Variant::rationale_zero_target: return "W/ R=0";
    case Variant::rationale:
      if (config.momentum == 0) return "W/ m=0";
      if (config.momentum == 1) return "W/ m=1";
      return "Ours";
  }
  return "?";
}

namespace {

template <typename Real>
Tensor<Real> batch_inputs(const DomainDataset& ds,
                          std::span<const std::size_t> rows) {
  std::vector<Real> x;
  x.reserve(rows.size() * ds.feature_dim);
  for (std::size_t r : rows) {
    for (double v : ds.row(r)) x.push_back(static_cast<Real>(v));
  }
  return Tensor<Real>::constant({rows.size(), ds.feature_dim}, std::move(x));
}

std::vector<int> batch_labels(const DomainDataset& ds,
                              std::span<const std::size_t> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(ds.labels[r]);
  return y;
}

// Draws minibatch row indices from the training partition.
class BatchSampler {
 public:
  BatchSampler(const DomainDataset& train, Sampling mode, std::uint64_t seed)
      : rng_(seed) {
    if (mode == Sampling::pooled) {
      pools_.emplace_back();
      for (std::size_t i = 0; i < train.size(); ++i) pools_[0].push_back(i);
    } else {
      std::map<int, std::vector<std::size_t>> by_domain;
      for (std::size_t i = 0; i < train.size(); ++i) {
        by_domain[train.domains[i]].push_back(i);
      }
      for (auto& [d, rows] : by_domain) pools_.push_back(std::move(rows));
    }
    cursors_.assign(pools_.size(), 0);
    for (auto& p : pools_) std::shuffle(p.begin(), p.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t batch_size) {
    std::vector<std::size_t> rows;
    rows.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const std::size_t p = b % pools_.size();
      auto& pool = pools_[p];
      if (cursors_[p] == pool.size()) {
        std::shuffle(pool.begin(), pool.end(), rng_);
        cursors_[p] = 0;
      }
      rows.push_back(pool[cursors_[p]++]);
    }
    return rows;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> cursors_;
};

bool needs_rationale_grad(Variant v) {
  return v == Variant::rationale || v == Variant::rationale_zero_target;
}

// Class means of all three quantities over `ds`, computed with `model`.
template <typename Real>
void freeze_means_from(const Model<Real>& model, const DomainDataset& ds,
                       MeanBanks<Real>& banks) {
  const std::size_t k = model.config.class_count;
  std::map<BankKind, std::vector<std::vector<double>>> sums;
  std::vector<std::size_t> counts(k, 0);
  constexpr std::size_t chunk = 512;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) {
      rows.push_back(i);
    }
    const auto labels = batch_labels(ds, rows);
    Tape<Real> tape;
    const auto z = forward_features(model, tape, batch_inputs<Real>(ds, rows))
                       .detach();
    BatchQuantities<Real> q;
    q.feature = z;
    q.logit = forward_logits(model.head, tape, z);
    q.rationale = build_rationale(tape, z, model.head.weight().detach());
    for (BankKind kind :
         {BankKind::rationale, BankKind::feature, BankKind::logit}) {
      const auto batch = batch_class_means(kind, q.get(kind), labels, k);
      auto& s = sums[kind];
      if (s.empty()) s.assign(k, std::vector<double>(banks.get(kind).item_size()));
      for (std::size_t c = 0; c < batch.classes.size(); ++c) {
        for (std::size_t j = 0; j < batch.means[c].size(); ++j) {
          s[batch.classes[c]][j] +=
              static_cast<double>(batch.means[c][j]) * batch.counts[c];
        }
        if (kind == BankKind::feature) counts[batch.classes[c]] += batch.counts[c];
      }
    }
  }
  for (auto& [kind, s] : sums) {
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      std::vector<Real> mean(s[c].size());
      for (std::size_t j = 0; j < mean.size(); ++j) {
        mean[j] = static_cast<Real>(s[c][j] / static_cast<double>(counts[c]));
      }
      banks.get(kind).set_mean(c, mean);
    }
  }
}

}  // namespace

template <typename Real>
double accuracy(const Model<Real>& model, const DomainDataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t chunk = 512;
  const std::size_t k = model.config.class_count;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) {
      rows.push_back(i);
    }
    Tape<Real> tape;
    const auto z = forward_features(model, tape, batch_inputs<Real>(ds, rows));
    const auto logits = forward_logits(model.head, tape, z).data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto first = logits.begin() + static_cast<std::ptrdiff_t>(r * k);
      const auto best = std::max_element(first, first + static_cast<std::ptrdiff_t>(k)) - first;
      correct += best == ds.labels[rows[r]];
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

template <typename Real>
TrainOutcome<Real> train_model(const TrainConfig& config,
                               const TrialData& data) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const DomainDataset& train = data.train;
  if (train.size() == 0) throw ConfigError("empty training partition");

  ModelConfig mc;
  mc.input_dim = train.feature_dim;
  mc.hidden = config.hidden;
  mc.feature_dim = config.feature_dim;
  mc.class_count = train.class_count;
  mc.seed = stream_seed(config.seed, "init");
  Model<Real> model = init_model<Real>(mc);
  auto params = model.parameters();

  auto banks = MeanBanks<Real>::create(mc.feature_dim, mc.class_count,
                                       static_cast<Real>(config.momentum),
                                       config.mean_init);
  if (config.mean_init == MeanInit::frozen_init) {
    freeze_means_from(model, train, banks);
  }

  BatchSampler sampler(train, config.sampling,
                       stream_seed(config.seed, "shuffle"));
  auto adam = AdamState<Real>::zeros_like(params);
  const auto alpha = static_cast<Real>(config.alpha);

  TrainOutcome<Real> out{TrialResult{}, model, model.clone()};
  TrialResult& result = out.result;
  result.config = config;
  result.method = method_label(config);
  result.trace.reserve(config.steps);
  double best_val = -1.0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto rows = sampler.next(config.batch_size);
    const auto labels = batch_labels(train, rows);
    Tape<Real> tape;
    const auto x = batch_inputs<Real>(train, rows);
    const auto z = forward_features(model, tape, x);
    const auto logits = forward_logits(model.head, tape, z);
    const auto ce = tape.softmax_cross_entropy(logits, labels);

    BatchQuantities<Real> q;
    q.feature = z;
    q.logit = logits;
    q.rationale = needs_rationale_grad(config.variant)
                      ? build_rationale(tape, z, model.head.weight())
                      : build_rationale(tape, z.detach(),
                                        model.head.weight().detach());

    // Means are updated from this batch before the loss reads them.
    std::size_t singletons = 0;
    for (BankKind kind :
         {BankKind::rationale, BankKind::feature, BankKind::logit}) {
      const auto batch =
          batch_class_means(kind, q.get(kind), labels, mc.class_count);
      if (kind == BankKind::rationale) singletons = batch.singleton_count();
      banks.get(kind).update(batch);
    }

    std::optional<Tensor<Real>> inv;
    if (config.variant != Variant::none) {
      inv = invariance_loss(tape, config.variant, q, banks, labels,
                            config.normalization);
    }
    const auto total = total_loss(tape, ce, inv, alpha);

    TraceRow row;
    row.step = step;
    row.loss_cla = static_cast<double>(ce.item());
    if (inv) row.loss_inv = static_cast<double>(inv->item());
    row.loss_all = static_cast<double>(total.item());
    row.scd = scd_trace(q, banks, labels);
    row.singleton_classes = singletons;
    if (!std::isfinite(row.loss_all)) {
      throw DivergenceError(
          "non-finite loss at step " + std::to_string(step), step);
    }
    result.trace.push_back(row);

    zero_grad(std::span<Tensor<Real>>(params));
    if (total.requires_grad()) tape.backward(total);
    try {
      if (config.optimizer == OptimizerKind::adam) {
        adam_step(std::span<Tensor<Real>>(params), adam,
                  static_cast<Real>(config.lr), static_cast<Real>(config.beta1),
                  static_cast<Real>(config.beta2),
                  static_cast<Real>(config.eps));
      } else {
        sgd_step(std::span<Tensor<Real>>(params),
                 static_cast<Real>(config.lr));
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " (training step " +
                                std::to_string(step) + ")",
                            step);
    }

    if (step % config.eval_interval == 0 || step == config.steps) {
      EvalPoint ev{step, accuracy(model, train), accuracy(model, data.val),
                   accuracy(model, data.target)};
      result.evals.push_back(ev);
      if (ev.val_acc > best_val) {
        best_val = ev.val_acc;
        result.selected_step = step;
        result.selected_val_acc = ev.val_acc;
        result.selected_target_acc = ev.target_acc;
        out.selected_model = model.clone();
      }
    }
  }
  out.final_model = model;
  result.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started)
                            .count();
  return out;
}

TrialResult train_one(const TrainConfig& config, const TrialData& data) {
  return config.precision == Precision::f32
             ? train_model<float>(config, data).result
             : train_model<double>(config, data).result;
}

double sample_log_uniform(const Range& r, std::uint64_t seed) {
  if (!(r.lo <= r.hi)) {
    throw ConfigError("empty hyperparameter range [" + std::to_string(r.lo) +
                      ", " + std::to_string(r.hi) + "]");
  }
  if (r.lo == r.hi) return r.lo;
  if (!(r.lo > 0)) {
    throw ConfigError("log-uniform range needs a positive lower bound, got " +
                      std::to_string(r.lo));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(std::log(r.lo), std::log(r.hi));
  return std::exp(u(rng));
}

TrialPlan plan_trial(const TrainConfig& base, const HpRanges& ranges,
                     std::size_t holdout, std::size_t trial_index,
                     std::uint64_t master_seed, double train_fraction) {
  const std::uint64_t trial_key = holdout * 1000003ull + trial_index;
  const std::uint64_t hp = stream_seed(master_seed, "hp", trial_key);
  TrialPlan plan;
  plan.config = base;
  plan.config.seed = stream_seed(master_seed, "trial", trial_key);
  plan.config.alpha = sample_log_uniform(ranges.alpha, stream_seed(hp, "alpha"));
  plan.config.momentum =
      sample_log_uniform(ranges.momentum, stream_seed(hp, "momentum"));
  plan.config.lr = sample_log_uniform(ranges.lr, stream_seed(hp, "lr"));
  const Range& bs = ranges.batch_size;
  if (!(bs.lo <= bs.hi) || bs.lo < 2) {
    throw ConfigError("invalid batch size range");
  }
  std::mt19937_64 rng(stream_seed(hp, "batch_size"));
  std::uniform_int_distribution<std::size_t> pick(
      static_cast<std::size_t>(bs.lo), static_cast<std::size_t>(bs.hi));
  plan.config.batch_size = bs.lo == bs.hi ? static_cast<std::size_t>(bs.lo)
                                          : pick(rng);
  plan.split = SplitPlan{holdout, stream_seed(master_seed, "split", trial_key),
                         train_fraction};
  return plan;
}

std::vector<TrialResult> run_trials(const TrainConfig& base,
                                    const DomainDataset& dataset,
                                    const SweepOptions& options) {
  if (options.n_trials < 1) throw ConfigError("n_trials must be >= 1");
  std::vector<TrialPlan> plans;
  for (std::size_t i = 0; i < options.n_trials; ++i) {
    plans.push_back(plan_trial(base, options.ranges, options.holdout, i,
                               options.master_seed, options.train_fraction));
    plans.back().config.validate();
  }
  std::vector<TrialResult> results(plans.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        const TrialData data = make_trial_data(dataset, plans[i].split);
        TrialResult r = train_one(plans[i].config, data);
        r.trial_index = i;
        r.holdout_domain = options.holdout;
        r.split_seed = plans[i].split.seed;
        r.dataset = options.dataset;
        if (!options.method.empty()) r.method = options.method;
        results[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t jobs =
      std::max<std::size_t>(1, std::min(options.jobs, plans.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

template double accuracy<float>(const Model<float>&, const DomainDataset&);
template double accuracy<double>(const Model<double>&, const DomainDataset&);
template TrainOutcome<float> train_model<float>(const TrainConfig&,
                                                const TrialData&);
template TrainOutcome<double> train_model<double>(const TrainConfig&,
                                                  const TrialData&);

}  // namespace ridg
