#pragma once

#include <unordered_map>
#include <vector>

#include "mis/tensor.hpp"

namespace mis {

/// Topologically ordered record of the graph feeding a root tensor: every
/// node appears after all of its parents.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  const std::vector<const Node<T>*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  const Node<T>* root() const { return nodes_.empty() ? nullptr : nodes_.back(); }

 private:
  std::vector<const Node<T>*> nodes_;
};

/// Gradients of a scalar loss with respect to its requires_grad leaves.
template <typename T>
class Gradients {
 public:
  bool contains(const Tensor<T>& leaf) const { return grads_.contains(leaf.node()); }
  /// Throws GraphError when the leaf received no gradient.
  const Tensor<T>& of(const Tensor<T>& leaf) const;
  std::size_t size() const { return grads_.size(); }

  void set(const Node<T>* leaf, Tensor<T> grad) { grads_[leaf] = std::move(grad); }

 private:
  std::unordered_map<const Node<T>*, Tensor<T>> grads_;
};

template <typename T>
Gradients<T> backward(const Tensor<T>& loss, const Tape<T>& tape);

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
  return backward(loss, Tape<T>::record(loss));
}

}  // namespace mis
