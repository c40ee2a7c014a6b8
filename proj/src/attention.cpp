#include "mis/attention.hpp"

#include <cmath>

#include "mis/ops.hpp"

namespace mis {

template <typename T>
MultiHeadParams<T> MultiHeadParams<T>::create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                              std::size_t heads, std::uint64_t seed) {
  if (heads == 0 || dim % heads != 0)
    throw DimensionError("model dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  MultiHeadParams p;
  p.heads = heads;
  p.wq = store.add_uniform(prefix + ".wq", {dim, dim}, dim, seed);
  p.wk = store.add_uniform(prefix + ".wk", {dim, dim}, dim, seed);
  p.wv = store.add_uniform(prefix + ".wv", {dim, dim}, dim, seed);
  p.wo = store.add_uniform(prefix + ".wo", {dim, dim}, dim, seed);
  return p;
}

template <typename T>
MultiHeadParams<T> MultiHeadParams<T>::identity(std::size_t dim, std::size_t heads) {
  std::vector<T> eye(dim * dim, T(0));
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = T(1);
  MultiHeadParams p;
  p.heads = heads;
  p.wq = Tensor<T>({dim, dim}, eye);
  p.wk = Tensor<T>({dim, dim}, eye);
  p.wv = Tensor<T>({dim, dim}, eye);
  p.wo = Tensor<T>({dim, dim}, eye);
  return p;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& zq, const Tensor<T>& zk, const Tensor<T>& zv,
                               const AttentionMask& mask, const MultiHeadParams<T>& params, AttentionStats* stats) {
  if (zq.rank() != 3 || zk.rank() != 3 || zk.shape() != zv.shape() || zq.dim(0) != zk.dim(0) ||
      zq.dim(2) != zk.dim(2))
    throw DimensionError("attention inputs must be [Bt,L,C] with matching batch and C: q" + to_string(zq.shape()) +
                         " k" + to_string(zk.shape()) + " v" + to_string(zv.shape()));
  const std::size_t bt = zq.dim(0), lq = zq.dim(1), lk = zk.dim(1), c = zq.dim(2);
  const std::size_t h = params.heads;
  if (h == 0 || c % h != 0)
    throw DimensionError("model dim " + std::to_string(c) + " not divisible by " + std::to_string(h) + " heads");
  if (params.wq.shape() != Shape{c, c} || params.wk.shape() != Shape{c, c} || params.wv.shape() != Shape{c, c} ||
      params.wo.shape() != Shape{c, c})
    throw DimensionError("attention projections must be [" + std::to_string(c) + "," + std::to_string(c) + "]");
  if (mask.rows() != lq || mask.cols() != lk)
    throw DimensionError("mask " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                         " does not match sequence lengths " + std::to_string(lq) + "x" + std::to_string(lk));
  const std::size_t d = c / h;

  Tensor<T> q = permute(reshape(matmul(zq, params.wq), {bt, lq, h, d}), {0, 2, 1, 3});
  Tensor<T> kt = permute(reshape(matmul(zk, params.wk), {bt, lk, h, d}), {0, 2, 3, 1});
  Tensor<T> v = permute(reshape(matmul(zv, params.wv), {bt, lk, h, d}), {0, 2, 1, 3});
  Tensor<T> scores = scale(matmul(q, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  Tensor<T> probs = masked_softmax_lastdim(scores, mask.to_bias<T>());
  Tensor<T> out = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {bt, lq, c});

  if (stats) {
    stats->key_visits += bt * mask.allowed_count();
    stats->queries += bt * lq;
  }
  return matmul(out, params.wo);
}

namespace {

void check_latents(const Shape& s, const char* what) {
  if (s.size() != 5) throw DimensionError(std::string(what) + " must be [BZ,N,H,W,C], got " + to_string(s));
}

}  // namespace

template <typename T>
Tensor<T> blockwise_self_attention(const Tensor<T>& z_noisy, const BlockLayout& layout,
                                   const MultiHeadParams<T>& params, AttentionStats* stats) {
  check_latents(z_noisy.shape(), "noisy latents");
  const auto& s = z_noisy.shape();
  if (s[1] != layout.n_images())
    throw DimensionError("latents hold " + std::to_string(s[1]) + " images, layout expects " +
                         std::to_string(layout.n_images()));
  const std::size_t group = layout.block_size() * s[2] * s[3];
  Tensor<T> blocks = reshape(z_noisy, {s[0] * layout.n_blocks(), group, s[4]});
  AttentionMask full(group, group, true);
  return reshape(multi_head_attention(blocks, blocks, blocks, full, params, stats), s);
}

template <typename T>
Tensor<T> global_cross_attention(const Tensor<T>& z_noisy, const Tensor<T>& z_clean, const BlockLayout& layout,
                                 const MultiHeadParams<T>& params, AttentionStats* stats) {
  check_latents(z_noisy.shape(), "noisy latents");
  if (z_noisy.shape() != z_clean.shape())
    throw DimensionError("noisy " + to_string(z_noisy.shape()) + " vs clean " + to_string(z_clean.shape()));
  const auto& s = z_noisy.shape();
  if (s[1] != layout.n_images()) throw DimensionError("latent image count does not match layout");
  const std::size_t len = s[1] * s[2] * s[3];
  Tensor<T> q = reshape(z_noisy, {s[0], len, s[4]});
  Tensor<T> kv = reshape(z_clean, {s[0], len, s[4]});
  AttentionMask mask = build_global_causal_mask(layout, s[2], s[3]);
  return reshape(multi_head_attention(q, kv, kv, mask, params, stats), s);
}

template <typename T>
Tensor<T> block_set_cross_attention(const Tensor<T>& z_noisy, const Tensor<T>& z_clean, const BlockLayout& layout,
                                    const MultiHeadParams<T>& params, AttentionStats* stats) {
  check_latents(z_noisy.shape(), "noisy latents");
  if (z_noisy.shape() != z_clean.shape())
    throw DimensionError("noisy " + to_string(z_noisy.shape()) + " vs clean " + to_string(z_clean.shape()));
  const auto& s = z_noisy.shape();
  if (s[1] != layout.n_images()) throw DimensionError("latent image count does not match layout");
  const std::size_t bz = s[0], n = s[1], h = s[2], w = s[3], c = s[4];
  // [BZ,N,H,W,C] -> [BZ,H,W,N,C] -> [(BZ*H*W), N, C]
  auto to_set_axis = [&](const Tensor<T>& z) { return reshape(permute(z, {0, 2, 3, 1, 4}), {bz * h * w, n, c}); };
  AttentionMask mask = build_set_axis_causal_mask(layout);
  Tensor<T> q = to_set_axis(z_noisy);
  Tensor<T> kv = to_set_axis(z_clean);
  Tensor<T> out = multi_head_attention(q, kv, kv, mask, params, stats);
  return permute(reshape(out, {bz, h, w, n, c}), {0, 3, 1, 2, 4});
}

template <typename T>
Tensor<T> external_cross_attention(const Tensor<T>& z_noisy, const Tensor<T>& features,
                                   const MultiHeadParams<T>& params, const Tensor<T>& key_proj,
                                   AttentionStats* stats) {
  check_latents(z_noisy.shape(), "noisy latents");
  if (features.rank() != 4) throw DimensionError("features must be [BZ,N,S,D], got " + to_string(features.shape()));
  const auto& s = z_noisy.shape();
  const auto& f = features.shape();
  if (f[0] != s[0] || f[1] != s[1])
    throw DimensionError("latents " + to_string(s) + " and features " + to_string(f) + " disagree on BZ or N");
  if (key_proj.shape() != Shape{f[3], s[4]})
    throw DimensionError("feature projection must be [" + std::to_string(f[3]) + "," + std::to_string(s[4]) + "]");
  const std::size_t len = s[1] * s[2] * s[3];
  Tensor<T> q = reshape(z_noisy, {s[0], len, s[4]});
  Tensor<T> kv = matmul(reshape(features, {f[0], f[1] * f[2], f[3]}), key_proj);
  AttentionMask mask = build_external_causal_mask(s[1], f[2], s[2], s[3]);
  return reshape(multi_head_attention(q, kv, kv, mask, params, stats), s);
}

template <typename T>
Tensor<T> pair_latents(const Tensor<T>& z_clean, const Tensor<T>& z_noisy) {
  if (z_clean.shape() != z_noisy.shape())
    throw DimensionError("clean " + to_string(z_clean.shape()) + " vs noisy " + to_string(z_noisy.shape()));
  Shape s = z_clean.shape();
  Shape with_pair = s;
  with_pair.insert(with_pair.begin() + 1, 1);
  Tensor<T> out = concat({reshape(z_clean, with_pair), reshape(z_noisy, with_pair)}, 1);
  return out;
}

#define MIS_INSTANTIATE(T)                                                                                        \
  template struct MultiHeadParams<T>;                                                                             \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                          const AttentionMask&, const MultiHeadParams<T>&, AttentionStats*);       \
  template Tensor<T> blockwise_self_attention(const Tensor<T>&, const BlockLayout&, const MultiHeadParams<T>&,   \
                                              AttentionStats*);                                                   \
  template Tensor<T> global_cross_attention(const Tensor<T>&, const Tensor<T>&, const BlockLayout&,              \
                                            const MultiHeadParams<T>&, AttentionStats*);                          \
  template Tensor<T> block_set_cross_attention(const Tensor<T>&, const Tensor<T>&, const BlockLayout&,           \
                                               const MultiHeadParams<T>&, AttentionStats*);                       \
  template Tensor<T> external_cross_attention(const Tensor<T>&, const Tensor<T>&, const MultiHeadParams<T>&,     \
                                              const Tensor<T>&, AttentionStats*);                                 \
  template Tensor<T> pair_latents(const Tensor<T>&, const Tensor<T>&);

MIS_INSTANTIATE(float)
MIS_INSTANTIATE(double)

}  // namespace mis
