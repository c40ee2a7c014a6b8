#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mis/attention.hpp"
#include "mis/conditioning.hpp"
#include "mis/optim.hpp"
#include "mis/tensor.hpp"
#include "mis/variant.hpp"

namespace mis {

enum class AttentionKind { Global, BlockSet, External };

std::string_view to_string(AttentionKind k);

/// Spatial extent at or below tau gets Global cross-attention, above it
/// Block-Set. kNoThreshold makes every level Global.
inline constexpr std::size_t kNoThreshold = std::numeric_limits<std::size_t>::max();
AttentionKind select_attention_kind(std::size_t spatial_extent, std::size_t tau);

struct UNetConfig {
  Variant variant = Variant::MisSa;
  std::size_t latent_channels = 48;
  std::size_t latent_height = 8;
  std::size_t latent_width = 8;
  std::size_t base_channels = 32;
  std::vector<std::size_t> channel_mult{1, 2};
  std::size_t time_dim = 64;
  std::size_t groups = 8;
  std::size_t heads = 4;
  std::size_t tau = 4;
  std::size_t block_size = 1;  // MisSa only; MisDino always runs with blocks of one
  std::size_t feature_tokens = 16;
  std::size_t feature_dim = 32;
  TaskKind task = TaskKind::None;
  std::size_t task_dim = 64;          // embedder width for MisSa; MisDino embeds straight to feature_dim
  std::size_t position_input_dim = 32;
  bool attention_enabled = true;
  std::uint64_t seed = 0;

  std::size_t levels() const { return channel_mult.size(); }
  std::size_t level_channels(std::size_t level) const { return base_channels * channel_mult.at(level); }
  std::size_t time_embed_dim() const { return 4 * base_channels; }
  std::size_t block_size_for_variant() const { return variant == Variant::MisSa ? block_size : 1; }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

/// Per-image timesteps: one value for everything, one per set, or one per image.
using Timesteps = std::span<const double>;

template <typename T>
class UNet {
 public:
  explicit UNet(UNetConfig config);

  const UNetConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  /// Attention kind per encoder level.
  std::vector<AttentionKind> attention_kinds() const;

  /// noisy: [BZ, N, C, H, W]. context: clean latents of the same shape
  /// (MisSa) or features [BZ, N, S, D] (MisDino). tasks: empty, or one
  /// condition of N entries per set. Returns the noise prediction, shaped
  /// like noisy.
  Tensor<T> forward(const Tensor<T>& noisy, const Tensor<T>& context, Timesteps t,
                    std::span<const TaskCondition> tasks = {}, AttentionStats* stats = nullptr) const;

  /// MisSa only: paired [BZ, 2, N, C, H, W] with clean at index 0.
  Tensor<T> forward_paired(const Tensor<T>& paired, Timesteps t, std::span<const TaskCondition> tasks = {},
                           AttentionStats* stats = nullptr) const;

  /// Zero context of the right shape for n images per set.
  Tensor<T> zero_context(std::size_t bz, std::size_t n) const;

  struct ResBlock {
    Tensor<T> gn1_g, gn1_b, conv1_w, conv1_b, temb_w, temb_b, gn2_g, gn2_b, conv2_w, conv2_b;
    Tensor<T> skip_w, skip_b;  // 1x1, only when channels change
  };
  struct AttentionStage {
    AttentionKind kind;
    Tensor<T> ln_self_g, ln_self_b, ln_q_g, ln_q_b, ln_k_g, ln_k_b;
    MultiHeadParams<T> self_attn, cross_attn;
    Tensor<T> key_proj;   // MisDino: [D, C]
    Tensor<T> task_proj;  // with a task: [task_dim, C] (MisSa) or [D, C] (MisDino)
  };

 private:
  Tensor<T> time_embedding(std::span<const double> per_sample) const;
  Tensor<T> res_block(const ResBlock& rb, const Tensor<T>& x, const Tensor<T>& temb) const;
  Tensor<T> attention_sa(const AttentionStage& st, const Tensor<T>& h, std::size_t bz, std::size_t n,
                         const Tensor<T>* task_emb, AttentionStats* stats) const;
  Tensor<T> attention_dino(const AttentionStage& st, const Tensor<T>& h, std::size_t bz, std::size_t n,
                           const Tensor<T>& features, const Tensor<T>* task_emb, AttentionStats* stats) const;
  Tensor<T> embed_tasks(std::span<const TaskCondition> tasks, std::size_t bz, std::size_t n) const;

  UNetConfig config_;
  ParameterStore<T> store_;
  Tensor<T> conv_in_w_, conv_in_b_, out_gn_g_, out_gn_b_, conv_out_w_, conv_out_b_;
  Mlp<T> time_mlp_;
  Mlp<T> task_mlp_;
  std::vector<ResBlock> enc_blocks_;
  std::vector<AttentionStage> stages_;
  std::vector<Tensor<T>> down_w_, down_b_;
  std::vector<ResBlock> dec_blocks_;
};

}  // namespace mis
