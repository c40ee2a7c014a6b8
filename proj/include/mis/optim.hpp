#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mis/autograd.hpp"
#include "mis/tensor.hpp"

namespace mis {

/// Named learned tensors plus Adam state. Iteration is lexicographic by name.
template <typename T>
class ParameterStore {
 public:
  struct Moments {
    std::vector<T> first;
    std::vector<T> second;
  };

  /// Registers a zero-filled trainable tensor. Names must be unique.
  Tensor<T>& add(const std::string& name, Shape shape);
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded from (seed, name).
  Tensor<T>& add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed);
  Tensor<T>& add_constant(const std::string& name, Shape shape, T value);

  bool contains(const std::string& name) const { return params_.contains(name); }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);

  const std::map<std::string, Tensor<T>>& params() const { return params_; }
  std::map<std::string, Tensor<T>>& params() { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

 private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, Moments> moments_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter in the store. Throws
/// GraphError if any parameter lacks a gradient.
template <typename T>
void adam_step(ParameterStore<T>& store, const Gradients<T>& grads, const AdamConfig& config);

}  // namespace mis
