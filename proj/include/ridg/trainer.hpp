#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ridg/data.hpp"
#include "ridg/model.hpp"
#include "ridg/rationale.hpp"

namespace ridg {

enum class Precision { f32, f64 };
enum class OptimizerKind { adam, sgd };
enum class Sampling { pooled, stratified };

Precision parse_precision(std::string_view s);
std::string_view to_string(Precision p);
OptimizerKind parse_optimizer(std::string_view s);
std::string_view to_string(OptimizerKind o);
Sampling parse_sampling(std::string_view s);
std::string_view to_string(Sampling s);

struct TrainConfig {
  Variant variant = Variant::rationale;
  double alpha = 0.01;
  double momentum = 0.01;
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::element_mean;
  MeanInit mean_init = MeanInit::first_batch;
  std::size_t eval_interval = 100;
  Sampling sampling = Sampling::pooled;
  Precision precision = Precision::f64;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 16;

  void validate() const;
};

// Independent RNG stream for a named purpose, derived from a master seed.
std::uint64_t stream_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index = 0);

struct TrialData {
  DomainDataset train;
  DomainDataset val;
  DomainDataset target;
};

// Splits `ds` for `plan`, standardizes with statistics of the source
// domains, and materializes the three partitions.
TrialData make_trial_data(const DomainDataset& ds, const SplitPlan& plan);

struct EvalPoint {
  std::size_t step = 0;  // number of optimizer steps taken
  double train_acc = 0;  // percent
  double val_acc = 0;
  double target_acc = 0;
};

struct TraceRow {
  std::size_t step = 0;
  double loss_cla = 0;
  std::optional<double> loss_inv;
  double loss_all = 0;
  ScdValues scd;
  std::size_t singleton_classes = 0;
};

struct TrialResult {
  TrainConfig config;
  std::string method;
  std::string dataset;
  std::size_t holdout_domain = 0;
  std::size_t trial_index = 0;
  std::uint64_t split_seed = 0;
  std::vector<EvalPoint> evals;
  std::vector<TraceRow> trace;
  std::size_t selected_step = 0;
  double selected_val_acc = 0;
  double selected_target_acc = 0;
  double wall_seconds = 0;
};

template <typename Real>
struct TrainOutcome {
  TrialResult result;
  Model<Real> final_model;
  Model<Real> selected_model;  // checkpoint with max validation accuracy
};

// The training loop. Per step: minibatch, z = f(x), logits, rationale,
// momentum update of the class means for present classes, invariance loss
// against the updated means, L_all = CE + alpha * L_inv, zero grads,
// backward, optimizer step. Throws DivergenceError on a non-finite loss.
template <typename Real>
TrainOutcome<Real> train_model(const TrainConfig& config, const TrialData& data);

// Precision-dispatching wrapper around train_model.
TrialResult train_one(const TrainConfig& config, const TrialData& data);

// Percent of samples whose argmax logit equals the label.
template <typename Real>
double accuracy(const Model<Real>& model, const DomainDataset& ds);

struct Range {
  double lo = 0;
  double hi = 0;
};

struct HpRanges {
  Range alpha{0.001, 0.1};
  Range momentum{0.0001, 0.1};
  Range lr{1e-3, 1e-3};
  Range batch_size{64, 64};
};

// Log-uniform draw; returns lo exactly when lo == hi.
double sample_log_uniform(const Range& r, std::uint64_t seed);

struct TrialPlan {
  TrainConfig config;
  SplitPlan split;
};

TrialPlan plan_trial(const TrainConfig& base, const HpRanges& ranges,
                     std::size_t holdout, std::size_t trial_index,
                     std::uint64_t master_seed, double train_fraction = 0.8);

struct SweepOptions {
  std::size_t holdout = 0;
  std::size_t n_trials = 1;
  HpRanges ranges;
  std::uint64_t master_seed = 0;
  double train_fraction = 0.8;
  std::size_t jobs = 1;
  std::string method;
  std::string dataset = "synthetic";
};

// Trials run on up to `jobs` threads; output is ordered by trial index.
std::vector<TrialResult> run_trials(const TrainConfig& base,
                                    const DomainDataset& dataset,
                                    const SweepOptions& options);

// Default method label for a configuration (ERM, Ours, W/ fea., ...).
std::string method_label(const TrainConfig& config);

}  // namespace ridg
