#pragma once

// Reference implementations used only by tests: central finite differences
// and plain nested loops over the documented layouts.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ridg/model.hpp"
#include "ridg/rationale.hpp"
#include "ridg/tensor.hpp"

namespace oracle {

using ridg::Tensor;

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n,
                                         double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n,
                                      std::size_t k) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(k) - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// d f / d p for every entry of every tensor in `params`, by central
// differences. `f` must re-read the parameter values on each call.
inline std::vector<std::vector<double>> finite_difference(
    std::span<Tensor<double>> params, const std::function<double()>& f,
    double h = 1e-5) {
  std::vector<std::vector<double>> out;
  for (auto& p : params) {
    std::vector<double> g(p.size());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      const double up = f();
      values[i] = keep - h;
      const double down = f();
      values[i] = keep;
      g[i] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||) over the concatenation of all entries.
inline double relative_error(const std::vector<std::vector<double>>& a,
                             const std::vector<std::vector<double>>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i) {
      diff += (a[t][i] - b[t][i]) * (a[t][i] - b[t][i]);
      na += a[t][i] * a[t][i];
      nb += b[t][i] * b[t][i];
    }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

// K x N x D, R[k][n][j] = W[j][k] * z[n][j]
inline std::vector<double> rationale(const std::vector<double>& z,
                                     const std::vector<double>& w,
                                     std::size_t n, std::size_t d,
                                     std::size_t k) {
  std::vector<double> r(k * n * d);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < d; ++j)
        r[(c * n + s) * d + j] = w[j * k + c] * z[s * d + j];
  return r;
}

// Logits z W, N x K.
inline std::vector<double> logits(const std::vector<double>& z,
                                  const std::vector<double>& w, std::size_t n,
                                  std::size_t d, std::size_t k) {
  std::vector<double> o(n * k, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) o[s * k + c] += z[s * d + j] * w[j * k + c];
  return o;
}

// Element (sample n, item position i) of a batch in `kind` layout with
// `item` entries per sample.
inline double at(ridg::BankKind kind, const std::vector<double>& q,
                 std::size_t n, std::size_t i, std::size_t samples,
                 std::size_t item, std::size_t inner) {
  if (kind != ridg::BankKind::rationale) return q[n * item + i];
  const std::size_t o = i / inner, j = i % inner;
  return q[(o * samples + n) * inner + j];
}

// Invariance loss by explicit loops.
//   sample_sum_over_batch: (1/N) sum_n ||q_n - t_{y_n}||^2
//   element_mean:          sum_k (1/(n_k * item)) sum_{n: y_n = k} ||q_n - t_k||^2
inline double invariance(ridg::BankKind kind, const std::vector<double>& q,
                         std::size_t samples, std::size_t item,
                         std::size_t inner, const std::vector<int>& labels,
                         const std::vector<std::vector<double>>& targets,
                         ridg::Normalization norm) {
  std::vector<double> per_class_sum(targets.size(), 0.0);
  std::vector<std::size_t> counts(targets.size(), 0);
  for (std::size_t n = 0; n < samples; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    double sq = 0;
    for (std::size_t i = 0; i < item; ++i) {
      const double d = at(kind, q, n, i, samples, item, inner) - targets[y][i];
      sq += d * d;
    }
    per_class_sum[y] += sq;
    ++counts[y];
  }
  double total = 0;
  if (norm == ridg::Normalization::sample_sum_over_batch) {
    for (double s : per_class_sum) total += s;
    return total / static_cast<double>(samples);
  }
  for (std::size_t c = 0; c < targets.size(); ++c) {
    if (counts[c] == 0) continue;
    total += per_class_sum[c] / static_cast<double>(counts[c] * item);
  }
  return total;
}

// Per-class batch means in item layout.
inline std::vector<std::vector<double>> class_means(
    ridg::BankKind kind, const std::vector<double>& q, std::size_t samples,
    std::size_t item, std::size_t inner, const std::vector<int>& labels,
    std::size_t k) {
  std::vector<std::vector<double>> means(k, std::vector<double>(item, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t n = 0; n < samples; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    ++counts[y];
    for (std::size_t i = 0; i < item; ++i)
      means[y][i] += at(kind, q, n, i, samples, item, inner);
  }
  for (std::size_t c = 0; c < k; ++c)
    for (auto& v : means[c])
      if (counts[c]) v /= static_cast<double>(counts[c]);
  return means;
}

// (1 - m) * old + m * batch
inline std::vector<double> momentum_step(const std::vector<double>& old,
                                         const std::vector<double>& batch,
                                         double m) {
  std::vector<double> out(old.size());
  for (std::size_t i = 0; i < old.size(); ++i)
    out[i] = (1 - m) * old[i] + m * batch[i];
  return out;
}

// (1/N) sum_n ||q_n - c_{y_n}||
inline double scd(ridg::BankKind kind, const std::vector<double>& q,
                  std::size_t samples, std::size_t item, std::size_t inner,
                  const std::vector<int>& labels,
                  const std::vector<std::vector<double>>& centers) {
  double total = 0;
  for (std::size_t n = 0; n < samples; ++n) {
    double sq = 0;
    for (std::size_t i = 0; i < item; ++i) {
      const double d = at(kind, q, n, i, samples, item, inner) -
                       centers[static_cast<std::size_t>(labels[n])][i];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(samples);
}

// Mean cross entropy with a max shift.
inline double cross_entropy(const std::vector<double>& o, std::size_t n,
                            std::size_t k, const std::vector<int>& labels) {
  double total = 0;
  for (std::size_t s = 0; s < n; ++s) {
    double mx = o[s * k];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, o[s * k + c]);
    double z = 0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(o[s * k + c] - mx);
    total += std::log(z) + mx - o[s * k + static_cast<std::size_t>(labels[s])];
  }
  return total / static_cast<double>(n);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
