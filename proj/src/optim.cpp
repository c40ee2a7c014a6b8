#include "mis/optim.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "mis/rng.hpp"

namespace mis {

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Shape shape) {
  return add_constant(name, std::move(shape), T(0));
}

template <typename T>
Tensor<T>& ParameterStore<T>::add_constant(const std::string& name, Shape shape, T value) {
  if (params_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto [it, _] = params_.emplace(name, Tensor<T>(std::move(shape), value, true));
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                                          std::uint64_t seed) {
  Tensor<T>& p = add(name, std::move(shape));
  Rng rng(mix_seed(seed, fnv1a(name)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.mutable_data()) v = static_cast<T>(dist(rng));
  return p;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.numel();
  return n;
}

template <typename T>
void adam_step(ParameterStore<T>& store, const Gradients<T>& grads, const AdamConfig& config) {
  for (const auto& [name, p] : std::as_const(store).params())
    if (!grads.contains(p)) throw GraphError("missing gradient for parameter " + name);

  const std::uint64_t step = store.step() + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  auto& moments = store.moments();
  for (auto& [name, p] : store.params()) {
    auto g = grads.of(p).data();
    auto& mo = moments[name];
    if (mo.first.empty()) {
      mo.first.assign(p.numel(), T(0));
      mo.second.assign(p.numel(), T(0));
    }
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = config.beta1 * mo.first[i] + (1.0 - config.beta1) * gi;
      const double v = config.beta2 * mo.second[i] + (1.0 - config.beta2) * gi * gi;
      mo.first[i] = static_cast<T>(m);
      mo.second[i] = static_cast<T>(v);
      const double update = config.lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
      w[i] = static_cast<T>(w[i] - update);
    }
  }
  store.set_step(step);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void adam_step(ParameterStore<float>&, const Gradients<float>&, const AdamConfig&);
template void adam_step(ParameterStore<double>&, const Gradients<double>&, const AdamConfig&);

}  // namespace mis
