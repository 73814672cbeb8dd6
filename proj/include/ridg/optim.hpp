#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ridg/tensor.hpp"

namespace ridg {

template <typename Real>
struct AdamState {
  std::vector<std::vector<Real>> first;   // per parameter
  std::vector<std::vector<Real>> second;
  std::size_t step = 0;

  // Zero moments shaped like `params`.
  static AdamState zeros_like(std::span<const Tensor<Real>> params);
};

// Bias-corrected adaptive-moment update, in place. Parameters without a
// gradient buffer are treated as having a zero gradient. Throws
// DivergenceError (carrying the optimizer step) on a non-finite gradient.
template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state, Real lr,
               Real beta1, Real beta2, Real eps);

template <typename Real>
void sgd_step(std::span<Tensor<Real>> params, Real lr);

}  // namespace ridg
