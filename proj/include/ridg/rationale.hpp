#pragma once

// Rationale matrices, momentum class-mean banks and the invariance losses.
//
// Batch layouts, fixed project-wide:
//   rationale  K x N x D   entry (k, n, j) = W[j, k] * z[n, j]
//   feature    N x D
//   logit      N x K
// A bank item is one sample's slice with the sample axis removed, so a
// rationale item is stored K x D.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ridg/tensor.hpp"

namespace ridg {

enum class Variant {
  rationale,
  feature,
  logit,
  feature_plus_logit,
  rationale_zero_target,
  none,
};

enum class BankKind { rationale, feature, logit };

enum class MeanInit {
  first_batch,  // first sighting of a class sets its mean
  zeros,        // all means start at zero and are momentum-updated
  frozen_init,  // means precomputed from the untrained model (trainer)
};

std::string_view to_string(Variant v);
std::string_view to_string(BankKind k);
std::string_view to_string(MeanInit m);
Variant parse_variant(std::string_view s);
MeanInit parse_mean_init(std::string_view s);
Normalization parse_normalization(std::string_view s);
std::string_view to_string(Normalization n);

// Axis that indexes samples in the batch layout of `kind`.
std::size_t sample_axis(BankKind kind);

template <typename Real>
Tensor<Real> build_rationale(Tape<Real>& tape, const Tensor<Real>& z,
                             const Tensor<Real>& weight);

template <typename Real>
struct ClassBatchMeans {
  std::vector<std::size_t> classes;  // ascending, present in the batch
  std::vector<std::size_t> counts;
  std::vector<std::vector<Real>> means;

  std::size_t singleton_count() const;
};

// Per-class means of a batch quantity. Reads values only, so the result is
// detached from any tape.
template <typename Real>
ClassBatchMeans<Real> batch_class_means(BankKind kind, const Tensor<Real>& q,
                                        std::span<const int> labels,
                                        std::size_t class_count);

template <typename Real>
class ClassMeanBank {
 public:
  ClassMeanBank(BankKind kind, std::size_t class_count, Shape item_shape,
                Real momentum, MeanInit init);

  // One momentum step for every class present in `batch`; absent classes
  // keep their means. Advances the iteration counter once.
  void update(const ClassBatchMeans<Real>& batch);

  // Sets the mean of every present but uninitialized class from `batch`
  // without a momentum step.
  void initialize_missing(const ClassBatchMeans<Real>& batch);

  void set_mean(std::size_t k, std::span<const Real> values);

  BankKind kind() const { return kind_; }
  std::size_t class_count() const { return means_.size(); }
  const Shape& item_shape() const { return item_shape_; }
  std::size_t item_size() const { return item_size_; }
  Real momentum() const { return momentum_; }
  MeanInit init_mode() const { return init_; }
  std::size_t iteration() const { return iteration_; }
  bool initialized(std::size_t k) const { return initialized_.at(k); }
  std::span<const Real> mean(std::size_t k) const { return means_.at(k); }

 private:
  void check_batch(const ClassBatchMeans<Real>& batch) const;

  BankKind kind_;
  Shape item_shape_;
  std::size_t item_size_;
  Real momentum_;
  MeanInit init_;
  std::size_t iteration_ = 0;
  std::vector<std::vector<Real>> means_;
  std::vector<bool> initialized_;
};

template <typename Real>
struct MeanBanks {
  ClassMeanBank<Real> rationale;
  ClassMeanBank<Real> feature;
  ClassMeanBank<Real> logit;

  static MeanBanks create(std::size_t feature_dim, std::size_t class_count,
                          Real momentum, MeanInit init);

  const ClassMeanBank<Real>& get(BankKind kind) const;
  ClassMeanBank<Real>& get(BankKind kind);
};

// Batch-side quantities of one step; unneeded entries may stay undefined.
template <typename Real>
struct BatchQuantities {
  Tensor<Real> rationale;
  Tensor<Real> feature;
  Tensor<Real> logit;

  const Tensor<Real>& get(BankKind kind) const;
};

// Squared deviation of each sample from its class target, summed over the
// classes present in `labels`.
//   element_mean:          sum over classes of MSE(group, target)
//   sample_sum_over_batch: sum of per-sample squared norms / N
// Targets come from `bank` (or are zero when `zero_target`), never carry
// gradient, and are seeded from this batch for classes not yet seen.
template <typename Real>
Tensor<Real> invariance_term(Tape<Real>& tape, BankKind kind,
                             const Tensor<Real>& q, ClassMeanBank<Real>& bank,
                             std::span<const int> labels,
                             Normalization normalization,
                             bool zero_target = false);

template <typename Real>
Tensor<Real> invariance_loss(Tape<Real>& tape, Variant variant,
                             const BatchQuantities<Real>& quantities,
                             MeanBanks<Real>& banks,
                             std::span<const int> labels,
                             Normalization normalization);

// ce + alpha * inv, or ce alone when `inv` is absent.
template <typename Real>
Tensor<Real> total_loss(Tape<Real>& tape, const Tensor<Real>& ce,
                        const std::optional<Tensor<Real>>& inv, Real alpha);

// Mean over the batch of the (unsquared) distance between each sample's
// quantity and its class center.
template <typename Real>
Real sample_to_center_difference(BankKind kind, const Tensor<Real>& q,
                                 const ClassMeanBank<Real>& bank,
                                 std::span<const int> labels);

struct ScdValues {
  double rationale = 0;
  double feature = 0;
  double logit = 0;
};

template <typename Real>
ScdValues scd_trace(const BatchQuantities<Real>& quantities,
                    const MeanBanks<Real>& banks, std::span<const int> labels);

// One CSV row per sample: r{j}_{k} for j < D, k < K (row-major over j then
// k), then label and domain.
template <typename Real>
void write_rationale_csv(const std::filesystem::path& path,
                         const Tensor<Real>& rationale,
                         std::span<const int> labels,
                         std::span<const int> domains);

}  // namespace ridg
