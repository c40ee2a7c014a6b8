#pragma once

#include <cstddef>
#include <vector>

#include "mis/tensor.hpp"

namespace mis {

/// Partition of an image set of N images into K contiguous blocks of B.
class BlockLayout {
 public:
  BlockLayout(std::size_t n_images, std::size_t block_size);

  std::size_t n_images() const { return n_images_; }
  std::size_t block_size() const { return block_size_; }
  std::size_t n_blocks() const { return n_images_ / block_size_; }
  std::size_t block_of(std::size_t image) const { return image / block_size_; }

  friend bool operator==(const BlockLayout&, const BlockLayout&) = default;

 private:
  std::size_t n_images_;
  std::size_t block_size_;
};

/// Boolean query x key admissibility matrix.
class AttentionMask {
 public:
  AttentionMask(std::size_t rows, std::size_t cols, bool fill = false);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool allowed(std::size_t q, std::size_t k) const { return cells_[q * cols_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { cells_[q * cols_ + k] = v ? 1 : 0; }

  std::size_t allowed_in_row(std::size_t q) const;
  std::size_t allowed_count() const;

  /// allowed -> 0, disallowed -> mask_sentinel<T>(); shape [rows, cols].
  template <typename T>
  Tensor<T> to_bias() const;

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<unsigned char> cells_;
};

// Patch index convention for an N x H x W set: (image * H + y) * W + x.

/// Query patch may see key patch iff both images share a block.
AttentionMask build_block_self_mask(const BlockLayout& layout, std::size_t h, std::size_t w);

/// Noisy query in block b sees every clean patch of blocks < b.
AttentionMask build_global_causal_mask(const BlockLayout& layout, std::size_t h, std::size_t w);

/// N x N per spatial location: noisy image i sees clean image j iff block_of(j) < block_of(i).
AttentionMask build_set_axis_causal_mask(const BlockLayout& layout);

/// Rows N*H*W grouped by image, cols N*S grouped by image; image i sees
/// the feature tokens of images j < i.
AttentionMask build_external_causal_mask(std::size_t n_images, std::size_t tokens, std::size_t h = 1,
                                         std::size_t w = 1);

}  // namespace mis
