#include "ridg/optim.hpp"

#include <cmath>

#include "ridg/errors.hpp"

namespace ridg {

template <typename Real>
AdamState<Real> AdamState<Real>::zeros_like(
    std::span<const Tensor<Real>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.first.emplace_back(p.size(), Real(0));
    s.second.emplace_back(p.size(), Real(0));
  }
  return s;
}

template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state, Real lr,
               Real beta1, Real beta2, Real eps) {
  if (state.first.size() != params.size()) {
    throw ContractError("adam state tracks " +
                        std::to_string(state.first.size()) +
                        " parameters, given " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Real g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw DivergenceError("non-finite gradient at optimizer step " +
                                  std::to_string(state.step + 1),
                              state.step + 1);
      }
    }
  }
  ++state.step;
  const auto t = static_cast<Real>(state.step);
  const Real correct1 = Real(1) - std::pow(beta1, t);
  const Real correct2 = Real(1) - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto grad = p.grad();
    auto values = p.mutable_data();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const Real g = grad.empty() ? Real(0) : grad[j];
      m[j] = beta1 * m[j] + (Real(1) - beta1) * g;
      v[j] = beta2 * v[j] + (Real(1) - beta2) * g * g;
      const Real m_hat = m[j] / correct1;
      const Real v_hat = v[j] / correct2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename Real>
void sgd_step(std::span<Tensor<Real>> params, Real lr) {
  for (auto& p : params) {
    const auto grad = p.grad();
    if (grad.empty()) continue;
    auto values = p.mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (!std::isfinite(grad[j])) {
        throw DivergenceError("non-finite gradient in sgd step", 0);
      }
      values[j] -= lr * grad[j];
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&,
                               float, float, float, float);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&,
                                double, double, double, double);
template void sgd_step<float>(std::span<Tensor<float>>, float);
template void sgd_step<double>(std::span<Tensor<double>>, double);

}  // namespace ridg
