#include "mis/masks.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace mis {

BlockLayout::BlockLayout(std::size_t n_images, std::size_t block_size)
    : n_images_(n_images), block_size_(block_size) {
  if (n_images == 0 || block_size == 0 || n_images % block_size != 0)
    throw DimensionError("block layout needs N = K*B with positive extents, got N=" + std::to_string(n_images) +
                         " B=" + std::to_string(block_size));
}

AttentionMask::AttentionMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), cells_(rows * cols, fill ? 1 : 0) {}

std::size_t AttentionMask::allowed_in_row(std::size_t q) const {
  return static_cast<std::size_t>(
      std::count(cells_.begin() + q * cols_, cells_.begin() + (q + 1) * cols_, static_cast<unsigned char>(1)));
}

std::size_t AttentionMask::allowed_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), static_cast<unsigned char>(1)));
}

template <typename T>
Tensor<T> AttentionMask::to_bias() const {
  std::vector<T> bias(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) bias[i] = cells_[i] ? T(0) : mask_sentinel<T>();
  return Tensor<T>(Shape{rows_, cols_}, std::move(bias));
}

template Tensor<float> AttentionMask::to_bias<float>() const;
template Tensor<double> AttentionMask::to_bias<double>() const;

AttentionMask build_block_self_mask(const BlockLayout& layout, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w, len = layout.n_images() * hw;
  AttentionMask mask(len, len);
  const std::size_t span = layout.block_size() * hw;
  for (std::size_t q = 0; q < len; ++q) {
    const std::size_t start = (q / span) * span;
    for (std::size_t k = start; k < start + span; ++k) mask.set(q, k, true);
  }
  return mask;
}

AttentionMask build_global_causal_mask(const BlockLayout& layout, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w, len = layout.n_images() * hw;
  const std::size_t span = layout.block_size() * hw;
  AttentionMask mask(len, len);
  for (std::size_t q = 0; q < len; ++q) {
    // Patches of earlier blocks form a prefix of the key sequence.
    const std::size_t visible = (q / span) * span;
    for (std::size_t k = 0; k < visible; ++k) mask.set(q, k, true);
  }
  return mask;
}

AttentionMask build_set_axis_causal_mask(const BlockLayout& layout) {
  const std::size_t n = layout.n_images();
  AttentionMask mask(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t visible = layout.block_of(i) * layout.block_size();
    for (std::size_t j = 0; j < visible; ++j) mask.set(i, j, true);
  }
  return mask;
}

AttentionMask build_external_causal_mask(std::size_t n_images, std::size_t tokens, std::size_t h, std::size_t w) {
  if (n_images == 0 || tokens == 0 || h == 0 || w == 0)
    throw DimensionError("external mask needs positive N, S, H, W");
  const std::size_t hw = h * w;
  AttentionMask mask(n_images * hw, n_images * tokens);
  for (std::size_t q = 0; q < mask.rows(); ++q) {
    const std::size_t visible = (q / hw) * tokens;
    for (std::size_t k = 0; k < visible; ++k) mask.set(q, k, true);
  }
  return mask;
}

}  // namespace mis
