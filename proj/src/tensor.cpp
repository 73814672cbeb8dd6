#include "ridg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ridg/errors.hpp"

namespace ridg {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

// Index map for single-axis broadcasting. `big` indices are flat offsets into
// the full shape; small(i) gives the offset into the operand that has extent
// 1 at `axis`.
struct Broadcast {
  Shape out;
  bool a_small = false;
  bool b_small = false;
  std::size_t extent = 1;
  std::size_t inner = 1;

  std::size_t small(std::size_t i) const {
    return (i / (extent * inner)) * inner + i % inner;
  }
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  auto fail = [&]() {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a) +
                         " and " + shape_str(b) + " are not broadcastable");
  };
  if (a.size() != b.size()) fail();
  std::size_t axis = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    if (axis != a.size()) fail();
    axis = i;
  }
  if (a[axis] == 1) {
    plan.a_small = true;
    plan.out = b;
  } else if (b[axis] == 1) {
    plan.b_small = true;
    plan.out = a;
  } else {
    fail();
  }
  plan.extent = plan.out[axis];
  for (std::size_t i = axis + 1; i < plan.out.size(); ++i) {
    plan.inner *= plan.out[i];
  }
  return plan;
}

template <typename Real>
Real* grad_of(const Tensor<Real>& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node()->grad_buffer().data();
}

}  // namespace

template <typename Real>
std::vector<Real>& Node<Real>::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad;
}

// ---------------------------------------------------------------- Tensor

template <typename Real>
Tensor<Real> Tensor<Real>::constant(Shape shape, std::vector<Real> data) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::parameter(Shape shape, std::vector<Real> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  std::vector<Real> data(numel(shape), Real(0));
  return requires_grad ? parameter(std::move(shape), std::move(data))
                       : constant(std::move(shape), std::move(data));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
  return constant({}, {value});
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (node_->data.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return constant(node_->shape, node_->data);
}

template <typename Real>
void zero_grad(std::span<Tensor<Real>> params) {
  for (auto& p : params) p.zero_grad();
}

// ------------------------------------------------------------------ Tape

template <typename Real>
Tensor<Real> Tape<Real>::record(Shape shape, std::vector<Real> data,
                                std::span<const Tensor<Real>> inputs,
                                Backward backward) {
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(),
                  [](const Tensor<Real>& t) { return t.requires_grad(); });
  Tensor<Real> out = Tensor<Real>::constant(std::move(shape), std::move(data));
  if (!needs_grad) return out;
  Node<Real>* node = out.node();
  node->requires_grad = true;
  node->recorded = true;
  node->backward = [fn = std::move(backward)](const Node<Real>& self) {
    fn(self.grad);
  };
  nodes_.push_back(out.node_ptr());
  return out;
}

template <typename Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "<null>"));
  }
  const auto it = std::find(nodes_.begin(), nodes_.end(), loss.node_ptr());
  if (it == nodes_.end()) {
    throw ContractError("backward() on a tensor that is not on this tape");
  }
  for (auto& node : nodes_) node->grad.assign(node->data.size(), Real(0));
  loss.node()->grad[0] = Real(1);
  const auto stop = std::next(it);
  for (auto rit = std::make_reverse_iterator(stop); rit != nodes_.rend();
       ++rit) {
    Node<Real>& node = **rit;
    if (node.backward) node.backward(node);
  }
}

template <typename Real>
Tensor<Real> Tape<Real>::matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not align");
  }
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  std::vector<Real> out(m * p, Real(0));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const Real xik = x[i * n + k];
      for (std::size_t j = 0; j < p; ++j) out[i * p + j] += xik * y[k * p + j];
    }
  }
  const Tensor<Real> inputs[] = {a, b};
  return record({m, p}, std::move(out), inputs,
                [a, b, m, n, p](std::span<const Real> g) {
                  const auto x = a.data();
                  const auto y = b.data();
                  if (Real* ga = grad_of(a)) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t k = 0; k < n; ++k) {
                        Real acc = 0;
                        for (std::size_t j = 0; j < p; ++j)
                          acc += g[i * p + j] * y[k * p + j];
                        ga[i * n + k] += acc;
                      }
                  }
                  if (Real* gb = grad_of(b)) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t k = 0; k < n; ++k) {
                        const Real xik = x[i * n + k];
                        for (std::size_t j = 0; j < p; ++j)
                          gb[k * p + j] += xik * g[i * p + j];
                      }
                  }
                });
}

namespace {

enum class BinaryOp { add, sub, mul };

template <typename Real>
Tensor<Real> binary(Tape<Real>& tape, const Tensor<Real>& a,
                    const Tensor<Real>& b, BinaryOp op, const char* name) {
  const Broadcast bc = plan_broadcast(a.shape(), b.shape(), name);
  const std::size_t total = numel(bc.out);
  auto ia = [bc](std::size_t i) { return bc.a_small ? bc.small(i) : i; };
  auto ib = [bc](std::size_t i) { return bc.b_small ? bc.small(i) : i; };
  std::vector<Real> out(total);
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < total; ++i) {
    const Real u = x[ia(i)], v = y[ib(i)];
    switch (op) {
      case BinaryOp::add: out[i] = u + v; break;
      case BinaryOp::sub: out[i] = u - v; break;
      case BinaryOp::mul: out[i] = u * v; break;
    }
  }
  const Tensor<Real> inputs[] = {a, b};
  return tape.record(
      bc.out, std::move(out), inputs,
      [a, b, op, total, ia, ib](std::span<const Real> g) {
        const auto x = a.data();
        const auto y = b.data();
        Real* ga = grad_of(a);
        Real* gb = grad_of(b);
        for (std::size_t i = 0; i < total; ++i) {
          switch (op) {
            case BinaryOp::add:
              if (ga) ga[ia(i)] += g[i];
              if (gb) gb[ib(i)] += g[i];
              break;
            case BinaryOp::sub:
              if (ga) ga[ia(i)] += g[i];
              if (gb) gb[ib(i)] -= g[i];
              break;
            case BinaryOp::mul:
              if (ga) ga[ia(i)] += g[i] * y[ib(i)];
              if (gb) gb[ib(i)] += g[i] * x[ia(i)];
              break;
          }
        }
      });
}

}  // namespace

template <typename Real>
Tensor<Real> Tape<Real>::add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(*this, a, b, BinaryOp::add, "add");
}

template <typename Real>
Tensor<Real> Tape<Real>::sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(*this, a, b, BinaryOp::sub, "sub");
}

template <typename Real>
Tensor<Real> Tape<Real>::mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(*this, a, b, BinaryOp::mul, "mul");
}

template <typename Real>
Tensor<Real> Tape<Real>::relu(const Tensor<Real>& a) {
  std::vector<Real> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0;
  const Tensor<Real> inputs[] = {a};
  return record(a.shape(), std::move(out), inputs,
                [a](std::span<const Real> g) {
                  const auto x = a.data();
                  Real* ga = grad_of(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0) ga[i] += g[i];
                });
}

template <typename Real>
Tensor<Real> Tape<Real>::square(const Tensor<Real>& a) {
  std::vector<Real> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  const Tensor<Real> inputs[] = {a};
  return record(a.shape(), std::move(out), inputs,
                [a](std::span<const Real> g) {
                  const auto x = a.data();
                  Real* ga = grad_of(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += Real(2) * x[i] * g[i];
                });
}

template <typename Real>
Tensor<Real> Tape<Real>::scale(const Tensor<Real>& a, Real factor) {
  std::vector<Real> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  const Tensor<Real> inputs[] = {a};
  return record(a.shape(), std::move(out), inputs,
                [a, factor](std::span<const Real> g) {
                  Real* ga = grad_of(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += factor * g[i];
                });
}

template <typename Real>
Tensor<Real> Tape<Real>::sum(const Tensor<Real>& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  const Tensor<Real> inputs[] = {a};
  return record({}, {total}, inputs, [a](std::span<const Real> g) {
    Real* ga = grad_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0];
  });
}

template <typename Real>
Tensor<Real> Tape<Real>::softmax_cross_entropy(const Tensor<Real>& logits,
                                               std::span<const int> labels) {
  if (logits.shape().size() != 2) {
    throw DimensionError("softmax_cross_entropy: logits must be NxK, got " +
                         shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw ValidationError("softmax_cross_entropy: empty batch");
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(n) +
                         " logit rows but " + std::to_string(labels.size()) +
                         " labels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValidationError("softmax_cross_entropy: label " +
                            std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " outside [0, " +
                            std::to_string(k) + ")");
    }
  }
  const auto x = logits.data();
  std::vector<Real> probs(n * k);
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.data() + i * k;
    const Real mx = *std::max_element(row, row + k);
    Real z = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      z += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    loss += std::log(z) - (row[labels[i]] - mx);
  }
  loss /= static_cast<Real>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  const Tensor<Real> inputs[] = {logits};
  return record({}, {loss}, inputs,
                [logits, probs = std::move(probs), owned = std::move(owned), n,
                 k](std::span<const Real> g) {
                  Real* gl = grad_of(logits);
                  const Real s = g[0] / static_cast<Real>(n);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                      const Real onehot =
                          static_cast<std::size_t>(owned[i]) == j ? 1 : 0;
                      gl[i * k + j] += s * (probs[i * k + j] - onehot);
                    }
                });
}

template <typename Real>
Tensor<Real> Tape<Real>::mean_squared(const Tensor<Real>& a,
                                      const Tensor<Real>& b,
                                      Normalization normalization,
                                      std::size_t sample_axis) {
  const Broadcast bc = plan_broadcast(a.shape(), b.shape(), "mean_squared");
  if (bc.a_small) {
    throw DimensionError("mean_squared: only the second operand broadcasts; " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Real divisor;
  if (normalization == Normalization::element_mean) {
    divisor = static_cast<Real>(a.size());
  } else {
    if (sample_axis >= a.shape().size()) {
      throw DimensionError("mean_squared: sample axis " +
                           std::to_string(sample_axis) + " out of range for " +
                           shape_str(a.shape()));
    }
    divisor = static_cast<Real>(a.dim(sample_axis));
  }
  if (divisor == 0) throw DimensionError("mean_squared: empty operand");
  const std::size_t total = a.size();
  auto ib = [bc](std::size_t i) { return bc.b_small ? bc.small(i) : i; };
  const auto x = a.data();
  const auto y = b.data();
  Real acc = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const Real d = x[i] - y[ib(i)];
    acc += d * d;
  }
  const Tensor<Real> inputs[] = {a, b};
  return record({}, {acc / divisor}, inputs,
                [a, b, ib, total, divisor](std::span<const Real> g) {
                  const auto x = a.data();
                  const auto y = b.data();
                  Real* ga = grad_of(a);
                  Real* gb = grad_of(b);
                  const Real s = Real(2) * g[0] / divisor;
                  for (std::size_t i = 0; i < total; ++i) {
                    const Real d = s * (x[i] - y[ib(i)]);
                    if (ga) ga[i] += d;
                    if (gb) gb[ib(i)] -= d;
                  }
                });
}

template <typename Real>
Tensor<Real> Tape<Real>::index_select(const Tensor<Real>& a, std::size_t axis,
                                      std::span<const std::size_t> indices) {
  const Shape& in = a.shape();
  if (axis >= in.size()) {
    throw DimensionError("index_select: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(in));
  }
  for (std::size_t idx : indices) {
    if (idx >= in[axis]) {
      throw ValidationError("index_select: index " + std::to_string(idx) +
                            " out of range for axis of extent " +
                            std::to_string(in[axis]));
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape out_shape = in;
  out_shape[axis] = indices.size();
  const std::size_t extent = in[axis], picked = indices.size();
  std::vector<Real> out(outer * picked * inner);
  const auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < picked; ++r)
      std::copy_n(x.begin() + (o * extent + indices[r]) * inner, inner,
                  out.begin() + (o * picked + r) * inner);
  std::vector<std::size_t> owned(indices.begin(), indices.end());
  const Tensor<Real> inputs[] = {a};
  return record(std::move(out_shape), std::move(out), inputs,
                [a, owned = std::move(owned), outer, extent, inner,
                 picked](std::span<const Real> g) {
                  Real* ga = grad_of(a);
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t r = 0; r < picked; ++r)
                      for (std::size_t i = 0; i < inner; ++i)
                        ga[(o * extent + owned[r]) * inner + i] +=
                            g[(o * picked + r) * inner + i];
                });
}

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void zero_grad<float>(std::span<Tensor<float>>);
template void zero_grad<double>(std::span<Tensor<double>>);

}  // namespace ridg
