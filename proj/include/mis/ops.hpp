#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mis/tensor.hpp"

namespace mis {

/// Right-aligned broadcast of two shapes; throws DimensionError naming both.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Elementwise, with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// Batched matrix product [..., m, k] x [..., k, n]; leading dims broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Softmax over the last axis of x + bias. bias broadcasts against x and
/// holds 0 or mask_sentinel(). Rows whose bias is entirely masked yield zeros.
template <typename T> Tensor<T> masked_softmax_lastdim(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, std::span<const std::size_t> order);
template <typename T> Tensor<T> permute(const Tensor<T>& x, std::initializer_list<std::size_t> order) {
  std::vector<std::size_t> o(order);
  return permute(x, std::span<const std::size_t>(o));
}
/// reshape to new_shape, then transpose axes by order.
template <typename T>
Tensor<T> reshape_permute(const Tensor<T>& x, Shape new_shape, std::span<const std::size_t> order);

template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T> Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  std::vector<Tensor<T>> v(parts);
  return concat(std::span<const Tensor<T>>(v), axis);
}

/// x[..., in] * weight[in, out] (+ bias[out]).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias = std::nullopt);
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return linear(x, weight, std::optional<Tensor<T>>(bias));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// x: [B, C, H, W]; statistics per (sample, group).
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// x: [B, Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

}  // namespace mis
