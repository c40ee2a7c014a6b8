#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mis {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
Shape strides_of(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised for any shape or extent incompatibility.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when backward is asked to differentiate something it cannot.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Additive-bias value standing in for minus infinity. Finite so that
/// max-subtraction never evaluates inf - inf.
template <typename T>
constexpr T mask_sentinel() {
  return std::numeric_limits<T>::lowest();
}

template <typename T>
using BackwardFn =
    std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> parent_grads)>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;
  std::string_view op = "leaf";
};

/// Dense row-major tensor handle. Copies share the underlying node; ops
/// always produce new nodes, so shared handles are safe to pass around.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  /// Builds an op result. The backward closure and parent links are only
  /// kept when at least one parent requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                        BackwardFn<T> backward, std::string_view op);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Mutable access to the buffer; intended for leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag);

  /// New leaf holding a copy of the values.
  Tensor detach() const;
  /// Same values converted to another scalar type (leaf, no gradient).
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->value[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
bool all_finite(const Tensor<T>& a);

}  // namespace mis
