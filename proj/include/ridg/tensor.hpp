#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to a node. Leaves (constants and parameters)
// live outside any tape; every differentiable op is a member of Tape and
// records its result node there in construction order. Tape::backward walks
// that record in reverse, so the traversal order is the exact reverse of
// construction, which is a valid reverse topological order.
//
// Broadcasting is limited to a single axis: two operands are compatible when
// their shapes are equal, or when they differ at exactly one axis and one of
// them has extent 1 there (the batch axis).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ridg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Normalization {
  element_mean,           // sum of squares / element count
  sample_sum_over_batch,  // sum of per-sample squared norms / batch size
};

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool recorded = false;   // produced by a tape op (non-leaf)
  std::function<void(const Node&)> backward;

  // Returns the gradient buffer, allocating zeros on first use.
  std::vector<Real>& grad_buffer();
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<Real> data);
  static Tensor parameter(Shape shape, std::vector<Real> data);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(Real value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  std::span<const Real> data() const { return node_->data; }
  Real item() const;

  // In-place writes are for optimizers and tests; never call on a tensor
  // that an unfinished tape still references.
  std::span<Real> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  void zero_grad();

  // Copy of the values with no gradient link.
  Tensor detach() const;

  Node<Real>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Real>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

template <typename Real>
class Tape {
 public:
  // Receives the finished output gradient; must add into input grads.
  using Backward = std::function<void(std::span<const Real> out_grad)>;

  Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
  Tensor<Real> relu(const Tensor<Real>& a);
  Tensor<Real> square(const Tensor<Real>& a);
  Tensor<Real> scale(const Tensor<Real>& a, Real factor);
  Tensor<Real> sum(const Tensor<Real>& a);

  // Mean over the batch of -log softmax(logits)[label].
  Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                     std::span<const int> labels);

  // b may be broadcast along one axis of a. For sample_sum_over_batch the
  // divisor is a.dim(sample_axis).
  Tensor<Real> mean_squared(const Tensor<Real>& a, const Tensor<Real>& b,
                            Normalization normalization,
                            std::size_t sample_axis = 0);

  // Gathers slices of `a` along `axis` in the given order.
  Tensor<Real> index_select(const Tensor<Real>& a, std::size_t axis,
                            std::span<const std::size_t> indices);

  // Records a custom primitive. The result requires grad iff any input does;
  // when none does the result is an unrecorded constant and `backward` is
  // dropped.
  Tensor<Real> record(Shape shape, std::vector<Real> data,
                      std::span<const Tensor<Real>> inputs, Backward backward);

  // Propagates d(loss)/d(.) into every requires_grad leaf reachable from
  // `loss`. Leaf gradients accumulate across calls; intermediate gradients
  // are reset at the start of each call.
  void backward(const Tensor<Real>& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::shared_ptr<Node<Real>>> nodes_;
};

// Zeroes the gradients of every tensor in `params`.
template <typename Real>
void zero_grad(std::span<Tensor<Real>> params);

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ridg
