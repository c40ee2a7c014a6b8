#include "mis/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mis/autograd.hpp"

namespace mis {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(mis::numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (mis::numel(shape) != values.size())
    throw DimensionError("tensor of shape " + to_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                             BackwardFn<T> backward, std::string_view op) {
  Tensor out(std::move(shape), std::move(values));
  bool needs = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->op = op;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
  }
  return out;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch for " + to_string(shape()));
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + to_string(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  if (!node_->parents.empty()) throw GraphError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->value);
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

// --- autograd -------------------------------------------------------------

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  if (!root.defined()) return tape;
  std::unordered_map<const Node<T>*, bool> visited;
  // Iterative post-order DFS; the frame holds the next parent to visit.
  std::vector<std::pair<const Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited[root.node()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited[parent]) {
        visited[parent] = true;
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
const Tensor<T>& Gradients<T>::of(const Tensor<T>& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) throw GraphError("no gradient recorded for tensor " + to_string(leaf.shape()));
  return it->second;
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss, const Tape<T>& tape) {
  if (!loss.defined() || loss.numel() != 1)
    throw GraphError("backward requires a scalar loss, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) throw GraphError("backward on a detached graph");
  if (tape.root() != loss.node()) throw GraphError("tape was not recorded from this loss");

  std::unordered_map<const Node<T>*, std::vector<T>> grads;
  grads[loss.node()] = {T(1)};
  std::vector<std::vector<T>*> parent_slots;

  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Node<T>* node = *it;
    if (!node->backward) continue;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    parent_slots.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Node<T>* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto& slot = grads[p];
      if (slot.empty()) slot.assign(p->value.size(), T(0));
      parent_slots[i] = &slot;
    }
    node->backward(g->second, parent_slots);
    // Not needed any more: every consumer ran before this node.
    grads.erase(node);
  }

  Gradients<T> out;
  for (const Node<T>* node : nodes) {
    if (node->backward) continue;
    auto g = grads.find(node);
    std::vector<T> values = g != grads.end() ? std::move(g->second) : std::vector<T>(node->value.size(), T(0));
    out.set(node, Tensor<T>(node->shape, std::move(values)));
  }
  return out;
}

#define MIS_INSTANTIATE(T)                                            \
  template class Tensor<T>;                                           \
  template class Tape<T>;                                             \
  template class Gradients<T>;                                        \
  template Gradients<T> backward(const Tensor<T>&, const Tape<T>&);   \
  template bool bit_equal(const Tensor<T>&, const Tensor<T>&);        \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);        \
  template bool all_finite(const Tensor<T>&);

MIS_INSTANTIATE(float)
MIS_INSTANTIATE(double)

}  // namespace mis
