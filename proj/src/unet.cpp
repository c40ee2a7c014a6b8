#include "mis/unet.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "mis/ops.hpp"

namespace mis {

std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::Global: return "global";
    case AttentionKind::BlockSet: return "block-set";
    case AttentionKind::External: return "external";
  }
  return "?";
}

AttentionKind select_attention_kind(std::size_t spatial_extent, std::size_t tau) {
  if (spatial_extent == 0) throw std::invalid_argument("spatial extent must be positive");
  return spatial_extent <= tau ? AttentionKind::Global : AttentionKind::BlockSet;
}

void UNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("unet config: " + msg); };
  if (levels() < 2) fail("need at least 2 resolution levels");
  if (latent_channels == 0 || base_channels == 0) fail("channel counts must be positive");
  const std::size_t div = std::size_t{1} << (levels() - 1);
  if (latent_height % div != 0 || latent_width % div != 0)
    fail("latent " + std::to_string(latent_height) + "x" + std::to_string(latent_width) + " not divisible by " +
         std::to_string(div) + " for " + std::to_string(levels()) + " levels");
  if (time_dim == 0 || time_dim % 2 != 0) fail("time_dim must be even");
  if (groups == 0) fail("groups must be positive");
  for (std::size_t l = 0; l < levels(); ++l) {
    const std::size_t c = level_channels(l);
    if (c == 0 || c % groups != 0) fail("level " + std::to_string(l) + " channels not divisible by groups");
    if (heads == 0 || c % heads != 0) fail("level " + std::to_string(l) + " channels not divisible by heads");
    if (l + 1 < levels() && (c + level_channels(l + 1)) % groups != 0) fail("decoder concat not divisible by groups");
  }
  if (block_size == 0) fail("block_size must be positive");
  if (variant == Variant::MisDino && (feature_tokens == 0 || feature_dim == 0)) fail("feature dims must be positive");
  if (task != TaskKind::None && task_dim == 0) fail("task_dim must be positive");
  if (position_input_dim == 0 || position_input_dim % 2 != 0) fail("position_input_dim must be even");
}

namespace {

std::string level_name(const char* what, std::size_t l) { return std::string(what) + std::to_string(l); }

// [BZ*N, C, H, W] <-> [BZ, N, H, W, C]
template <typename T>
Tensor<T> to_set_layout(const Tensor<T>& x, std::size_t bz, std::size_t n) {
  const std::vector<std::size_t> order{0, 1, 3, 4, 2};
  return reshape_permute(x, {bz, n, x.dim(1), x.dim(2), x.dim(3)}, std::span<const std::size_t>(order));
}

template <typename T>
Tensor<T> from_set_layout(const Tensor<T>& z) {
  auto p = permute(z, {0, 1, 4, 2, 3});
  return reshape(p, {z.dim(0) * z.dim(1), z.dim(4), z.dim(2), z.dim(3)});
}

}  // namespace

template <typename T>
UNet<T>::UNet(UNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const std::uint64_t seed = c.seed;
  auto& s = store_;

  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, Tensor<T>& w,
                  Tensor<T>& b) {
    w = s.add_uniform(name + ".w", {cout, cin, k, k}, cin * k * k, seed);
    b = s.add(name + ".b", {cout});
  };
  auto norm = [&](const std::string& name, std::size_t ch, Tensor<T>& g, Tensor<T>& b) {
    g = s.add_constant(name + ".g", {ch}, T(1));
    b = s.add(name + ".b", {ch});
  };
  auto res_block = [&](const std::string& name, std::size_t cin, std::size_t cout) {
    ResBlock rb;
    norm(name + ".gn1", cin, rb.gn1_g, rb.gn1_b);
    conv(name + ".conv1", cout, cin, 3, rb.conv1_w, rb.conv1_b);
    rb.temb_w = s.add_uniform(name + ".temb.w", {c.time_embed_dim(), cout}, c.time_embed_dim(), seed);
    rb.temb_b = s.add(name + ".temb.b", {cout});
    norm(name + ".gn2", cout, rb.gn2_g, rb.gn2_b);
    conv(name + ".conv2", cout, cout, 3, rb.conv2_w, rb.conv2_b);
    if (cin != cout) conv(name + ".skip", cout, cin, 1, rb.skip_w, rb.skip_b);
    return rb;
  };

  conv("conv_in", c.base_channels, c.latent_channels, 3, conv_in_w_, conv_in_b_);
  time_mlp_ = Mlp<T>::create(s, "time_mlp", c.time_dim, c.time_embed_dim(), c.time_embed_dim(), seed);

  const std::size_t task_out = c.variant == Variant::MisSa ? c.task_dim : c.feature_dim;
  if (c.task == TaskKind::Camera) task_mlp_ = Mlp<T>::create(s, "task_mlp", 12, c.task_dim, task_out, seed);
  if (c.task == TaskKind::Position)
    task_mlp_ = Mlp<T>::create(s, "task_mlp", c.position_input_dim, c.task_dim, task_out, seed);

  std::size_t ch = c.base_channels;
  for (std::size_t l = 0; l < c.levels(); ++l) {
    const std::size_t cl = c.level_channels(l);
    enc_blocks_.push_back(res_block(level_name("enc", l), ch, cl));
    ch = cl;

    const std::string an = level_name("attn", l);
    AttentionStage st;
    const std::size_t extent = std::max(c.latent_height, c.latent_width) >> l;
    st.kind = c.variant == Variant::MisDino ? AttentionKind::External : select_attention_kind(extent, c.tau);
    norm(an + ".ln_self", cl, st.ln_self_g, st.ln_self_b);
    norm(an + ".ln_q", cl, st.ln_q_g, st.ln_q_b);
    st.self_attn = MultiHeadParams<T>::create(s, an + ".self", cl, c.heads, seed);
    st.cross_attn = MultiHeadParams<T>::create(s, an + ".cross", cl, c.heads, seed);
    if (c.variant == Variant::MisSa) {
      norm(an + ".ln_k", cl, st.ln_k_g, st.ln_k_b);
      if (c.task != TaskKind::None) st.task_proj = s.add_uniform(an + ".task_proj", {c.task_dim, cl}, c.task_dim, seed);
    } else {
      st.key_proj = s.add_uniform(an + ".key_proj", {c.feature_dim, cl}, c.feature_dim, seed);
      if (c.task != TaskKind::None)
        st.task_proj = s.add_uniform(an + ".task_proj", {c.feature_dim, cl}, c.feature_dim, seed);
    }
    stages_.push_back(std::move(st));

    if (l + 1 < c.levels()) {
      Tensor<T> w, b;
      conv(level_name("down", l), cl, cl, 3, w, b);
      down_w_.push_back(w);
      down_b_.push_back(b);
    }
  }
  for (std::size_t l = c.levels() - 1; l-- > 0;) {
    const std::size_t cl = c.level_channels(l);
    dec_blocks_.push_back(res_block(level_name("dec", l), ch + cl, cl));
    ch = cl;
  }
  norm("out_gn", ch, out_gn_g_, out_gn_b_);
  conv("conv_out", c.latent_channels, ch, 3, conv_out_w_, conv_out_b_);
}

template <typename T>
std::vector<AttentionKind> UNet<T>::attention_kinds() const {
  std::vector<AttentionKind> out;
  for (const auto& st : stages_) out.push_back(st.kind);
  return out;
}

template <typename T>
Tensor<T> UNet<T>::zero_context(std::size_t bz, std::size_t n) const {
  if (config_.variant == Variant::MisSa)
    return Tensor<T>::zeros({bz, n, config_.latent_channels, config_.latent_height, config_.latent_width});
  return Tensor<T>::zeros({bz, n, config_.feature_tokens, config_.feature_dim});
}

template <typename T>
Tensor<T> UNet<T>::time_embedding(std::span<const double> per_sample) const {
  return time_mlp_(sinusoidal_table<T>(per_sample, config_.time_dim));
}

template <typename T>
Tensor<T> UNet<T>::res_block(const ResBlock& rb, const Tensor<T>& x, const Tensor<T>& temb) const {
  const std::size_t g = config_.groups;
  auto h = conv2d(silu(group_norm(x, g, rb.gn1_g, rb.gn1_b)), rb.conv1_w, rb.conv1_b, 1, 1);
  auto t = linear(silu(temb), rb.temb_w, rb.temb_b);
  h = add(h, reshape(t, {t.dim(0), t.dim(1), 1, 1}));
  h = conv2d(silu(group_norm(h, g, rb.gn2_g, rb.gn2_b)), rb.conv2_w, rb.conv2_b, 1, 1);
  auto skip = rb.skip_w.defined() ? conv2d(x, rb.skip_w, rb.skip_b, 1, 0) : x;
  return add(h, skip);
}

template <typename T>
Tensor<T> UNet<T>::embed_tasks(std::span<const TaskCondition> tasks, std::size_t bz, std::size_t n) const {
  if (tasks.size() != bz)
    throw DimensionError("expected " + std::to_string(bz) + " task conditions, got " + std::to_string(tasks.size()));
  std::vector<Tensor<T>> rows;
  for (const auto& tc : tasks) {
    if (tc.kind != TaskKind::None && tc.kind != config_.task)
      throw std::invalid_argument("task condition kind " + std::string(to_string(tc.kind)) +
                                  " does not match model task " + std::string(to_string(config_.task)));
    TaskCondition c = tc;
    if (c.kind == TaskKind::None) c = TaskCondition{config_.task, {}, {}, true};
    if (c.size() == 0 && !c.active()) {
      rows.push_back(Tensor<T>::zeros({1, n, task_mlp_.out_dim()}));
      continue;
    }
    if (c.size() != n)
      throw DimensionError("task condition has " + std::to_string(c.size()) + " entries for " + std::to_string(n) +
                           " images");
    auto e = embed_task(c, task_mlp_);
    rows.push_back(reshape(e, {1, n, e.dim(1)}));
  }
  return concat(std::span<const Tensor<T>>(rows), 0);
}

template <typename T>
Tensor<T> UNet<T>::attention_sa(const AttentionStage& st, const Tensor<T>& h, std::size_t bz, std::size_t n,
                                const Tensor<T>* task_emb, AttentionStats* stats) const {
  const std::size_t half = bz * n;
  auto zc = to_set_layout(slice(h, 0, 0, half), bz, n);
  auto zn = to_set_layout(slice(h, 0, half, 2 * half), bz, n);
  if (task_emb) {
    auto e = linear(*task_emb, st.task_proj);
    zc = inject_condition(zc, e, 4);
    zn = inject_condition(zn, e, 4);
  }
  const BlockLayout layout(n, config_.block_size);
  zn = add(zn, blockwise_self_attention(layer_norm(zn, st.ln_self_g, st.ln_self_b), layout, st.self_attn, stats));
  auto q = layer_norm(zn, st.ln_q_g, st.ln_q_b);
  auto k = layer_norm(zc, st.ln_k_g, st.ln_k_b);
  auto cross = st.kind == AttentionKind::Global ? global_cross_attention(q, k, layout, st.cross_attn, stats)
                                                : block_set_cross_attention(q, k, layout, st.cross_attn, stats);
  zn = add(zn, cross);
  return concat({from_set_layout(zc), from_set_layout(zn)}, 0);
}

template <typename T>
Tensor<T> UNet<T>::attention_dino(const AttentionStage& st, const Tensor<T>& h, std::size_t bz, std::size_t n,
                                  const Tensor<T>& features, const Tensor<T>* task_emb,
                                  AttentionStats* stats) const {
  auto z = to_set_layout(h, bz, n);
  // The target's own condition only reaches it through its hidden state;
  // its feature slot is masked out of the cross-attention.
  if (task_emb) z = inject_condition(z, linear(*task_emb, st.task_proj), 4);
  const BlockLayout layout(n, 1);
  z = add(z, blockwise_self_attention(layer_norm(z, st.ln_self_g, st.ln_self_b), layout, st.self_attn, stats));
  z = add(z, external_cross_attention(layer_norm(z, st.ln_q_g, st.ln_q_b), features, st.cross_attn, st.key_proj,
                                      stats));
  return from_set_layout(z);
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& noisy, const Tensor<T>& context, Timesteps t,
                           std::span<const TaskCondition> tasks, AttentionStats* stats) const {
  const auto& c = config_;
  if (noisy.rank() != 5 || noisy.dim(2) != c.latent_channels || noisy.dim(3) != c.latent_height ||
      noisy.dim(4) != c.latent_width)
    throw DimensionError("noisy latents " + to_string(noisy.shape()) + " do not match config [BZ, N, " +
                         std::to_string(c.latent_channels) + ", " + std::to_string(c.latent_height) + ", " +
                         std::to_string(c.latent_width) + "]");
  const std::size_t bz = noisy.dim(0), n = noisy.dim(1);
  if (n == 0 || bz == 0) throw DimensionError("empty image set");
  const bool sa = c.variant == Variant::MisSa;
  if (sa) {
    if (context.shape() != noisy.shape())
      throw DimensionError("clean latents " + to_string(context.shape()) + " must match noisy " +
                           to_string(noisy.shape()));
    if (n % c.block_size != 0)
      throw DimensionError("set of " + std::to_string(n) + " images not divisible into blocks of " +
                           std::to_string(c.block_size));
  } else if (context.shape() != Shape{bz, n, c.feature_tokens, c.feature_dim}) {
    throw DimensionError("features " + to_string(context.shape()) + " must be [" + std::to_string(bz) + ", " +
                         std::to_string(n) + ", " + std::to_string(c.feature_tokens) + ", " +
                         std::to_string(c.feature_dim) + "]");
  }

  std::vector<double> per_image(bz * n);
  if (t.size() == 1) {
    std::fill(per_image.begin(), per_image.end(), t[0]);
  } else if (t.size() == bz) {
    for (std::size_t i = 0; i < bz * n; ++i) per_image[i] = t[i / n];
  } else if (t.size() == bz * n) {
    per_image.assign(t.begin(), t.end());
  } else {
    throw DimensionError("got " + std::to_string(t.size()) + " timesteps for " + std::to_string(bz) + " sets of " +
                         std::to_string(n));
  }

  std::optional<Tensor<T>> task_emb;
  const bool use_tasks = c.task != TaskKind::None && !tasks.empty() && c.attention_enabled;
  if (use_tasks) task_emb = embed_tasks(tasks, bz, n);

  const Shape image_batch{bz * n, c.latent_channels, c.latent_height, c.latent_width};
  Tensor<T> h;
  Tensor<T> temb;
  Tensor<T> features;
  if (sa) {
    // Clean latents share the network at t = 0.
    h = concat({reshape(context, image_batch), reshape(noisy, image_batch)}, 0);
    std::vector<double> both(2 * bz * n, 0.0);
    std::copy(per_image.begin(), per_image.end(), both.begin() + bz * n);
    temb = time_embedding(both);
  } else {
    h = reshape(noisy, image_batch);
    temb = time_embedding(per_image);
    features = context;
    if (use_tasks) features = inject_condition(features, *task_emb, 3);
  }

  h = conv2d(h, conv_in_w_, conv_in_b_, 1, 1);
  std::vector<Tensor<T>> skips;
  for (std::size_t l = 0; l < c.levels(); ++l) {
    h = res_block(enc_blocks_[l], h, temb);
    if (c.attention_enabled) {
      if (sa) h = attention_sa(stages_[l], h, bz, n, task_emb ? &*task_emb : nullptr, stats);
      else h = attention_dino(stages_[l], h, bz, n, features, task_emb ? &*task_emb : nullptr, stats);
    }
    if (l + 1 < c.levels()) {
      skips.push_back(h);
      h = conv2d(h, down_w_[l], down_b_[l], 2, 1);
    }
  }

  // Only the noisy half goes through the decoder.
  auto noisy_half = [&](const Tensor<T>& x) { return sa ? slice(x, 0, bz * n, 2 * bz * n) : x; };
  h = noisy_half(h);
  auto temb_n = noisy_half(temb);
  for (std::size_t d = 0; d < dec_blocks_.size(); ++d) {
    const std::size_t l = c.levels() - 2 - d;
    h = concat({upsample_nearest2x(h), noisy_half(skips[l])}, 1);
    h = res_block(dec_blocks_[d], h, temb_n);
  }
  h = conv2d(silu(group_norm(h, c.groups, out_gn_g_, out_gn_b_)), conv_out_w_, conv_out_b_, 1, 1);
  return reshape(h, noisy.shape());
}

template <typename T>
Tensor<T> UNet<T>::forward_paired(const Tensor<T>& paired, Timesteps t, std::span<const TaskCondition> tasks,
                                  AttentionStats* stats) const {
  if (config_.variant != Variant::MisSa) throw std::invalid_argument("paired input is only defined for mis-sa");
  if (paired.rank() != 6 || paired.dim(1) != 2)
    throw DimensionError("paired latents must be [BZ, 2, N, C, H, W], got " + to_string(paired.shape()));
  Shape s{paired.dim(0), paired.dim(2), paired.dim(3), paired.dim(4), paired.dim(5)};
  auto clean = reshape(slice(paired, 1, 0, 1), s);
  auto noisy = reshape(slice(paired, 1, 1, 2), s);
  return forward(noisy, clean, t, tasks, stats);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace mis
