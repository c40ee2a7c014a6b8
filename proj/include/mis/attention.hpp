#pragma once

#include <cstdint>
#include <string>

#include "mis/masks.hpp"
#include "mis/optim.hpp"
#include "mis/tensor.hpp"

namespace mis {

/// Projections for h-head attention over model dim C; each is [C, C] and
/// applied as x * W.
template <typename T>
struct MultiHeadParams {
  std::size_t heads = 1;
  Tensor<T> wq, wk, wv, wo;

  std::size_t model_dim() const { return wq.dim(0); }
  std::size_t head_dim() const { return model_dim() / heads; }

  /// Registers <prefix>.{wq,wk,wv,wo} with fan-in uniform init.
  static MultiHeadParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, std::uint64_t seed);
  static MultiHeadParams identity(std::size_t dim, std::size_t heads);
};

/// Admissible (query, key) pairs processed, summed over the batch.
struct AttentionStats {
  std::size_t key_visits = 0;
  std::size_t queries = 0;
};

/// softmax(Q K^T / sqrt(d) + bias) V per head, heads concatenated and
/// output-projected. zq: [Bt, Lq, C], zk/zv: [Bt, Lk, C]. No projection
/// carries a bias, so fully masked rows come out as exact zeros.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& zq, const Tensor<T>& zk, const Tensor<T>& zv,
                               const AttentionMask& mask, const MultiHeadParams<T>& params,
                               AttentionStats* stats = nullptr);

// Latent tensors below are [BZ, N, H, W, C].

template <typename T>
Tensor<T> blockwise_self_attention(const Tensor<T>& z_noisy, const BlockLayout& layout,
                                   const MultiHeadParams<T>& params, AttentionStats* stats = nullptr);

/// Returns the updated noisy latents; see pair_latents for [z_c; z'_n].
template <typename T>
Tensor<T> global_cross_attention(const Tensor<T>& z_noisy, const Tensor<T>& z_clean, const BlockLayout& layout,
                                 const MultiHeadParams<T>& params, AttentionStats* stats = nullptr);

template <typename T>
Tensor<T> block_set_cross_attention(const Tensor<T>& z_noisy, const Tensor<T>& z_clean, const BlockLayout& layout,
                                    const MultiHeadParams<T>& params, AttentionStats* stats = nullptr);

/// features: [BZ, N, S, D]; key_proj: [D, C] maps features to model dim
/// before the key/value projections.
template <typename T>
Tensor<T> external_cross_attention(const Tensor<T>& z_noisy, const Tensor<T>& features,
                                   const MultiHeadParams<T>& params, const Tensor<T>& key_proj,
                                   AttentionStats* stats = nullptr);

/// Stacks clean and noisy latents into [BZ, 2, N, H, W, C].
template <typename T>
Tensor<T> pair_latents(const Tensor<T>& z_clean, const Tensor<T>& z_noisy);

}  // namespace mis
