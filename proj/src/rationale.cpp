#include "ridg/rationale.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "ridg/errors.hpp"

namespace ridg {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::rationale: return "rationale";
    case Variant::feature: return "feature";
    case Variant::logit: return "logit";
    case Variant::feature_plus_logit: return "feature_plus_logit";
    case Variant::rationale_zero_target: return "rationale_zero_target";
    case Variant::none: return "none";
  }
  return "?";
}

std::string_view to_string(BankKind k) {
  switch (k) {
    case BankKind::rationale: return "rationale";
    case BankKind::feature: return "feature";
    case BankKind::logit: return "logit";
  }
  return "?";
}

std::string_view to_string(MeanInit m) {
  switch (m) {
    case MeanInit::first_batch: return "first_batch";
    case MeanInit::zeros: return "zeros";
    case MeanInit::frozen_init: return "frozen_init";
  }
  return "?";
}

std::string_view to_string(Normalization n) {
  return n == Normalization::element_mean ? "element_mean" : "eq3";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::rationale, Variant::feature, Variant::logit,
                    Variant::feature_plus_logit, Variant::rationale_zero_target,
                    Variant::none}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

MeanInit parse_mean_init(std::string_view s) {
  for (MeanInit m :
       {MeanInit::first_batch, MeanInit::zeros, MeanInit::frozen_init}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown mean-init '" + std::string(s) + "'");
}

Normalization parse_normalization(std::string_view s) {
  if (s == "element_mean") return Normalization::element_mean;
  if (s == "eq3" || s == "sample_sum_over_batch") {
    return Normalization::sample_sum_over_batch;
  }
  throw ConfigError("unknown normalization '" + std::string(s) + "'");
}

std::size_t sample_axis(BankKind kind) {
  return kind == BankKind::rationale ? 1 : 0;
}

template <typename Real>
Tensor<Real> build_rationale(Tape<Real>& tape, const Tensor<Real>& z,
                             const Tensor<Real>& weight) {
  if (z.shape().size() != 2 || weight.shape().size() != 2 ||
      z.dim(1) != weight.dim(0)) {
    throw DimensionError("build_rationale: features " + shape_str(z.shape()) +
                         " vs classifier weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t n = z.dim(0), d = z.dim(1), k = weight.dim(1);
  std::vector<Real> out(k * n * d);
  const auto zs = z.data();
  const auto ws = weight.data();
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < d; ++j)
        out[(c * n + s) * d + j] = ws[j * k + c] * zs[s * d + j];
  const Tensor<Real> inputs[] = {z, weight};
  return tape.record(
      {k, n, d}, std::move(out), inputs,
      [z, weight, n, d, k](std::span<const Real> g) {
        const auto zs = z.data();
        const auto ws = weight.data();
        if (z.requires_grad()) {
          auto& gz = z.node()->grad_buffer();
          for (std::size_t c = 0; c < k; ++c)
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t j = 0; j < d; ++j)
                gz[s * d + j] += g[(c * n + s) * d + j] * ws[j * k + c];
        }
        if (weight.requires_grad()) {
          auto& gw = weight.node()->grad_buffer();
          for (std::size_t c = 0; c < k; ++c)
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t j = 0; j < d; ++j)
                gw[j * k + c] += g[(c * n + s) * d + j] * zs[s * d + j];
        }
      });
}

namespace {

// Flat-index geometry of a batch layout around its sample axis.
struct SampleGeometry {
  std::size_t outer = 1;
  std::size_t samples = 0;
  std::size_t inner = 1;

  std::size_t item_size() const { return outer * inner; }
  std::size_t offset(std::size_t o, std::size_t n, std::size_t i) const {
    return (o * samples + n) * inner + i;
  }
};

SampleGeometry geometry(BankKind kind, const Shape& shape) {
  const std::size_t axis = sample_axis(kind);
  const std::size_t rank = kind == BankKind::rationale ? 3 : 2;
  if (shape.size() != rank) {
    throw DimensionError(std::string(to_string(kind)) +
                         " batch must have rank " + std::to_string(rank) +
                         ", got " + shape_str(shape));
  }
  SampleGeometry g;
  for (std::size_t i = 0; i < axis; ++i) g.outer *= shape[i];
  g.samples = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) g.inner *= shape[i];
  return g;
}

Shape item_shape_of(BankKind kind, const Shape& shape) {
  Shape item = shape;
  item.erase(item.begin() + static_cast<std::ptrdiff_t>(sample_axis(kind)));
  return item;
}

void check_labels(std::span<const int> labels, std::size_t samples,
                  std::size_t class_count) {
  if (labels.size() != samples) {
    throw DimensionError("batch has " + std::to_string(samples) +
                         " samples but " + std::to_string(labels.size()) +
                         " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw ValidationError("label " + std::to_string(labels[i]) +
                            " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(class_count) +
                            ")");
    }
  }
}

}  // namespace

template <typename Real>
std::size_t ClassBatchMeans<Real>::singleton_count() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c == 1;
  return n;
}

template <typename Real>
ClassBatchMeans<Real> batch_class_means(BankKind kind, const Tensor<Real>& q,
                                        std::span<const int> labels,
                                        std::size_t class_count) {
  const SampleGeometry g = geometry(kind, q.shape());
  check_labels(labels, g.samples, class_count);
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    groups[static_cast<std::size_t>(labels[n])].push_back(n);
  }
  const auto values = q.data();
  ClassBatchMeans<Real> out;
  for (const auto& [cls, members] : groups) {
    std::vector<Real> mean(g.item_size(), Real(0));
    for (std::size_t o = 0; o < g.outer; ++o)
      for (std::size_t n : members)
        for (std::size_t i = 0; i < g.inner; ++i)
          mean[o * g.inner + i] += values[g.offset(o, n, i)];
    const Real count = static_cast<Real>(members.size());
    for (auto& v : mean) v /= count;
    out.classes.push_back(cls);
    out.counts.push_back(members.size());
    out.means.push_back(std::move(mean));
  }
  return out;
}

// --------------------------------------------------------- ClassMeanBank

template <typename Real>
ClassMeanBank<Real>::ClassMeanBank(BankKind kind, std::size_t class_count,
                                   Shape item_shape, Real momentum,
                                   MeanInit init)
    : kind_(kind),
      item_shape_(std::move(item_shape)),
      item_size_(numel(item_shape_)),
      momentum_(momentum),
      init_(init),
      means_(class_count, std::vector<Real>(item_size_, Real(0))),
      initialized_(class_count, init == MeanInit::zeros) {
  if (!(momentum >= 0 && momentum <= 1)) {
    throw ConfigError("momentum must lie in [0, 1], got " +
                      std::to_string(momentum));
  }
}

template <typename Real>
void ClassMeanBank<Real>::check_batch(const ClassBatchMeans<Real>& batch) const {
  for (std::size_t i = 0; i < batch.classes.size(); ++i) {
    if (batch.classes[i] >= means_.size()) {
      throw ValidationError("class index " + std::to_string(batch.classes[i]) +
                            " outside [0, " + std::to_string(means_.size()) +
                            ")");
    }
    if (batch.means[i].size() != item_size_) {
      throw DimensionError("class mean of size " +
                           std::to_string(batch.means[i].size()) +
                           " for bank items " + shape_str(item_shape_));
    }
  }
}

template <typename Real>
void ClassMeanBank<Real>::update(const ClassBatchMeans<Real>& batch) {
  check_batch(batch);
  const Real keep = Real(1) - momentum_;
  for (std::size_t i = 0; i < batch.classes.size(); ++i) {
    const std::size_t k = batch.classes[i];
    auto& mean = means_[k];
    const auto& fresh = batch.means[i];
    if (!initialized_[k]) {
      mean = fresh;
      initialized_[k] = true;
      continue;
    }
    for (std::size_t j = 0; j < item_size_; ++j) {
      mean[j] = keep * mean[j] + momentum_ * fresh[j];
    }
  }
  ++iteration_;
}

template <typename Real>
void ClassMeanBank<Real>::initialize_missing(
    const ClassBatchMeans<Real>& batch) {
  check_batch(batch);
  for (std::size_t i = 0; i < batch.classes.size(); ++i) {
    const std::size_t k = batch.classes[i];
    if (initialized_[k]) continue;
    means_[k] = batch.means[i];
    initialized_[k] = true;
  }
}

template <typename Real>
void ClassMeanBank<Real>::set_mean(std::size_t k, std::span<const Real> values) {
  if (k >= means_.size()) {
    throw ValidationError("class index " + std::to_string(k) + " outside [0, " +
                          std::to_string(means_.size()) + ")");
  }
  if (values.size() != item_size_) {
    throw DimensionError("set_mean: " + std::to_string(values.size()) +
                         " values for bank items " + shape_str(item_shape_));
  }
  means_[k].assign(values.begin(), values.end());
  initialized_[k] = true;
}

template <typename Real>
MeanBanks<Real> MeanBanks<Real>::create(std::size_t feature_dim,
                                        std::size_t class_count, Real momentum,
                                        MeanInit init) {
  return MeanBanks{
      ClassMeanBank<Real>(BankKind::rationale, class_count,
                          {class_count, feature_dim}, momentum, init),
      ClassMeanBank<Real>(BankKind::feature, class_count, {feature_dim},
                          momentum, init),
      ClassMeanBank<Real>(BankKind::logit, class_count, {class_count}, momentum,
                          init)};
}

template <typename Real>
const ClassMeanBank<Real>& MeanBanks<Real>::get(BankKind kind) const {
  switch (kind) {
    case BankKind::rationale: return rationale;
    case BankKind::feature: return feature;
    case BankKind::logit: return logit;
  }
  throw ContractError("unknown bank kind");
}

template <typename Real>
ClassMeanBank<Real>& MeanBanks<Real>::get(BankKind kind) {
  return const_cast<ClassMeanBank<Real>&>(std::as_const(*this).get(kind));
}

template <typename Real>
const Tensor<Real>& BatchQuantities<Real>::get(BankKind kind) const {
  const Tensor<Real>* t = kind == BankKind::rationale ? &rationale
                          : kind == BankKind::feature ? &feature
                                                      : &logit;
  if (!t->defined()) {
    throw ContractError(std::string("batch quantity '") +
                        std::string(to_string(kind)) + "' was not computed");
  }
  return *t;
}

// ------------------------------------------------------------------ losses

template <typename Real>
Tensor<Real> invariance_term(Tape<Real>& tape, BankKind kind,
                             const Tensor<Real>& q, ClassMeanBank<Real>& bank,
                             std::span<const int> labels,
                             Normalization normalization, bool zero_target) {
  if (bank.kind() != kind) {
    throw ContractError(std::string("invariance term for '") +
                        std::string(to_string(kind)) + "' given a '" +
                        std::string(to_string(bank.kind())) + "' bank");
  }
  const SampleGeometry g = geometry(kind, q.shape());
  if (item_shape_of(kind, q.shape()) != bank.item_shape()) {
    throw DimensionError("batch " + shape_str(q.shape()) +
                         " does not match bank items " +
                         shape_str(bank.item_shape()));
  }
  const auto batch = batch_class_means(kind, q, labels, bank.class_count());
  if (!zero_target) bank.initialize_missing(batch);

  auto target_item = [&](std::size_t cls) -> std::span<const Real> {
    static const std::vector<Real> empty;
    return zero_target ? std::span<const Real>(empty) : bank.mean(cls);
  };
  const std::size_t axis = sample_axis(kind);

  if (normalization == Normalization::sample_sum_over_batch) {
    std::vector<Real> target(q.size(), Real(0));
    if (!zero_target) {
      for (std::size_t n = 0; n < g.samples; ++n) {
        const auto item = target_item(static_cast<std::size_t>(labels[n]));
        for (std::size_t o = 0; o < g.outer; ++o)
          for (std::size_t i = 0; i < g.inner; ++i)
            target[g.offset(o, n, i)] = item[o * g.inner + i];
      }
    }
    return tape.mean_squared(q, Tensor<Real>::constant(q.shape(), target),
                             normalization, axis);
  }

  Shape target_shape = q.shape();
  target_shape[axis] = 1;
  Tensor<Real> loss;
  for (std::size_t c = 0; c < batch.classes.size(); ++c) {
    const std::size_t cls = batch.classes[c];
    std::vector<std::size_t> members;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      if (static_cast<std::size_t>(labels[n]) == cls) members.push_back(n);
    }
    const auto item = target_item(cls);
    std::vector<Real> target = zero_target
                                   ? std::vector<Real>(g.item_size(), Real(0))
                                   : std::vector<Real>(item.begin(), item.end());
    auto group = tape.index_select(q, axis, members);
    auto term = tape.mean_squared(
        group, Tensor<Real>::constant(target_shape, std::move(target)),
        normalization, axis);
    loss = loss.defined() ? tape.add(loss, term) : term;
  }
  return loss.defined() ? loss : Tensor<Real>::scalar(Real(0));
}

template <typename Real>
Tensor<Real> invariance_loss(Tape<Real>& tape, Variant variant,
                             const BatchQuantities<Real>& quantities,
                             MeanBanks<Real>& banks,
                             std::span<const int> labels,
                             Normalization normalization) {
  auto term = [&](BankKind kind, bool zero_target = false) {
    return invariance_term(tape, kind, quantities.get(kind), banks.get(kind),
                           labels, normalization, zero_target);
  };
  switch (variant) {
    case Variant::rationale: return term(BankKind::rationale);
    case Variant::rationale_zero_target:
      return term(BankKind::rationale, true);
    case Variant::feature: return term(BankKind::feature);
    case Variant::logit: return term(BankKind::logit);
    case Variant::feature_plus_logit:
      return tape.add(term(BankKind::feature), term(BankKind::logit));
    case Variant::none: break;
  }
  throw ContractError("invariance_loss called with variant 'none'");
}

template <typename Real>
Tensor<Real> total_loss(Tape<Real>& tape, const Tensor<Real>& ce,
                        const std::optional<Tensor<Real>>& inv, Real alpha) {
  if (!(alpha >= 0) || !std::isfinite(alpha)) {
    throw ConfigError("alpha must be finite and >= 0, got " +
                      std::to_string(alpha));
  }
  if (!inv) return ce;
  return tape.add(ce, tape.scale(*inv, alpha));
}

template <typename Real>
Real sample_to_center_difference(BankKind kind, const Tensor<Real>& q,
                                 const ClassMeanBank<Real>& bank,
                                 std::span<const int> labels) {
  const SampleGeometry g = geometry(kind, q.shape());
  check_labels(labels, g.samples, bank.class_count());
  if (g.item_size() != bank.item_size()) {
    throw DimensionError("batch " + shape_str(q.shape()) +
                         " does not match bank items " +
                         shape_str(bank.item_shape()));
  }
  if (g.samples == 0) return Real(0);
  const auto values = q.data();
  Real total = 0;
  for (std::size_t n = 0; n < g.samples; ++n) {
    const auto cls = static_cast<std::size_t>(labels[n]);
    if (!bank.initialized(cls)) {
      throw ContractError("SCD requested for class " + std::to_string(cls) +
                          " before its mean was initialized");
    }
    const auto center = bank.mean(cls);
    Real sq = 0;
    for (std::size_t o = 0; o < g.outer; ++o)
      for (std::size_t i = 0; i < g.inner; ++i) {
        const Real d = values[g.offset(o, n, i)] - center[o * g.inner + i];
        sq += d * d;
      }
    total += std::sqrt(sq);
  }
  return total / static_cast<Real>(g.samples);
}

template <typename Real>
ScdValues scd_trace(const BatchQuantities<Real>& quantities,
                    const MeanBanks<Real>& banks, std::span<const int> labels) {
  auto one = [&](BankKind kind) {
    return static_cast<double>(sample_to_center_difference(
        kind, quantities.get(kind), banks.get(kind), labels));
  };
  return {one(BankKind::rationale), one(BankKind::feature),
          one(BankKind::logit)};
}

template <typename Real>
void write_rationale_csv(const std::filesystem::path& path,
                         const Tensor<Real>& rationale,
                         std::span<const int> labels,
                         std::span<const int> domains) {
  if (rationale.shape().size() != 3) {
    throw DimensionError("rationale export expects K x N x D, got " +
                         shape_str(rationale.shape()));
  }
  const std::size_t k = rationale.dim(0), n = rationale.dim(1),
                    d = rationale.dim(2);
  if (labels.size() != n || domains.size() != n) {
    throw DimensionError("rationale export: " + std::to_string(n) +
                         " samples but " + std::to_string(labels.size()) +
                         " labels and " + std::to_string(domains.size()) +
                         " domains");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(std::numeric_limits<Real>::max_digits10);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < k; ++c) out << 'r' << j << '_' << c << ',';
  out << "label,domain\n";
  const auto values = rationale.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c) out << values[(c * n + s) * d + j] << ',';
    out << labels[s] << ',' << domains[s] << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

#define RIDG_INSTANTIATE_RATIONALE(Real)                                      \
  template Tensor<Real> build_rationale<Real>(Tape<Real>&,                    \
                                              const Tensor<Real>&,            \
                                              const Tensor<Real>&);           \
  template struct ClassBatchMeans<Real>;                                      \
  template ClassBatchMeans<Real> batch_class_means<Real>(                     \
      BankKind, const Tensor<Real>&, std::span<const int>, std::size_t);      \
  template class ClassMeanBank<Real>;                                         \
  template struct MeanBanks<Real>;                                            \
  template struct BatchQuantities<Real>;                                      \
  template Tensor<Real> invariance_term<Real>(                                \
      Tape<Real>&, BankKind, const Tensor<Real>&, ClassMeanBank<Real>&,       \
      std::span<const int>, Normalization, bool);                             \
  template Tensor<Real> invariance_loss<Real>(                                \
      Tape<Real>&, Variant, const BatchQuantities<Real>&, MeanBanks<Real>&,   \
      std::span<const int>, Normalization);                                   \
  template Tensor<Real> total_loss<Real>(Tape<Real>&, const Tensor<Real>&,    \
                                         const std::optional<Tensor<Real>>&,  \
                                         Real);                               \
  template Real sample_to_center_difference<Real>(                            \
      BankKind, const Tensor<Real>&, const ClassMeanBank<Real>&,              \
      std::span<const int>);                                                  \
  template ScdValues scd_trace<Real>(const BatchQuantities<Real>&,            \
                                     const MeanBanks<Real>&,                  \
                                     std::span<const int>);                   \
  template void write_rationale_csv<Real>(const std::filesystem::path&,       \
                                          const Tensor<Real>&,                \
                                          std::span<const int>,               \
                                          std::span<const int>);

RIDG_INSTANTIATE_RATIONALE(float)
RIDG_INSTANTIATE_RATIONALE(double)

}  // namespace ridg
