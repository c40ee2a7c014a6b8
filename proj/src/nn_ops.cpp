#include <cmath>

#include "mis/eigen_maps.hpp"
#include "mis/ops.hpp"

namespace mis {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0))
    throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  Tensor<T> y = matmul(x, weight);
  if (bias) {
    if (bias->shape() != Shape{weight.dim(1)})
      throw DimensionError("linear: bias " + to_string(bias->shape()) + " vs weight " + to_string(weight.shape()));
    y = add(y, *bias);
  }
  return y;
}

namespace {

// Normalizes `groups` contiguous segments of `count` elements. The affine
// parameter for element e of segment s is gamma[channel(s, e)].
template <typename T, typename ChannelOf>
Tensor<T> segment_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t segments,
                       std::size_t count, T eps, ChannelOf channel_of, std::string_view op) {
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(segments);
  std::vector<T> out(x.numel());
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t base = s * count;
    double m = 0;
    for (std::size_t e = 0; e < count; ++e) m += xv[base + e];
    m /= static_cast<double>(count);
    double var = 0;
    for (std::size_t e = 0; e < count; ++e) {
      double d = xv[base + e] - m;
      var += d * d;
    }
    var /= static_cast<double>(count);
    const T r = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*rstd)[s] = r;
    for (std::size_t e = 0; e < count; ++e) {
      const std::size_t c = channel_of(s, e);
      T h = (xv[base + e] - static_cast<T>(m)) * r;
      (*xhat)[base + e] = h;
      out[base + e] = h * gv[c] + bv[c];
    }
  }
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [gamma, xhat, rstd, segments, count, channel_of](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto gv = gamma.data();
        const auto& h = *xhat;
        for (std::size_t s = 0; s < segments; ++s) {
          const std::size_t base = s * count;
          double mean_d = 0, mean_dh = 0;
          for (std::size_t e = 0; e < count; ++e) {
            const std::size_t c = channel_of(s, e);
            const double d = static_cast<double>(g[base + e]) * gv[c];
            mean_d += d;
            mean_dh += d * h[base + e];
            if (pg[1]) (*pg[1])[c] += g[base + e] * h[base + e];
            if (pg[2]) (*pg[2])[c] += g[base + e];
          }
          if (!pg[0]) continue;
          mean_d /= static_cast<double>(count);
          mean_dh /= static_cast<double>(count);
          const double r = (*rstd)[s];
          for (std::size_t e = 0; e < count; ++e) {
            const std::size_t c = channel_of(s, e);
            const double d = static_cast<double>(g[base + e]) * gv[c];
            (*pg[0])[base + e] += static_cast<T>(r * (d - mean_d - h[base + e] * mean_dh));
          }
        }
      },
      op);
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t len = x.shape().back();
  if (gamma.shape() != Shape{len} || beta.shape() != Shape{len})
    throw DimensionError("layer_norm: affine params must be [" + std::to_string(len) + "]");
  return segment_norm(
      x, gamma, beta, x.numel() / len, len, eps, [](std::size_t, std::size_t e) { return e; }, "layer_norm");
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() != 4) throw DimensionError("group_norm expects [B,C,H,W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups == 0 || c % groups != 0)
    throw DimensionError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("group_norm: affine params must be [" + std::to_string(c) + "]");
  const std::size_t per_group = c / groups;
  const std::size_t count = per_group * hw;
  return segment_norm(
      x, gamma, beta, x.dim(0) * groups, count, eps,
      [groups, per_group, hw](std::size_t s, std::size_t e) { return (s % groups) * per_group + e / hw; },
      "group_norm");
}

namespace {

template <typename T>
void im2col(const T* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            row[oy * wo + ox] = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                    ? T(0)
                                    : img[(c * h + iy) * w + ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            img[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3))
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (bias.shape() != Shape{cout}) throw DimensionError("conv2d: bias must be [" + std::to_string(cout) + "]");
  if (stride == 0 || h + 2 * pad < k || w + 2 * pad < k) throw DimensionError("conv2d: kernel larger than input");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  const std::size_t patch = cin * k * k, plane = ho * wo;

  std::vector<T> out(batch * cout * plane);
  std::vector<T> col(patch * plane);
  auto wm = cmat<T>(weight.data().data(), cout, patch);
  auto bv = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.data().data() + b * cin * h * w, cin, h, w, k, stride, pad, ho, wo, col.data());
    auto o = mat<T>(out.data() + b * cout * plane, cout, plane);
    o.noalias() = wm * cmat<T>(col.data(), patch, plane);
    for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += bv[c];
  }
  return Tensor<T>::from_op(
      Shape{batch, cout, ho, wo}, std::move(out), {x, weight, bias},
      [x, weight, batch, cin, h, w, cout, k, stride, pad, ho, wo, patch, plane](
          std::span<const T> g, std::span<std::vector<T>* const> pg) {
        std::vector<T> col(patch * plane);
        std::vector<T> gcol(patch * plane);
        auto wm = cmat<T>(weight.data().data(), cout, patch);
        for (std::size_t b = 0; b < batch; ++b) {
          auto gm = cmat<T>(g.data() + b * cout * plane, cout, plane);
          if (pg[1]) {
            im2col(x.data().data() + b * cin * h * w, cin, h, w, k, stride, pad, ho, wo, col.data());
            mat<T>(pg[1]->data(), cout, patch).noalias() += gm * cmat<T>(col.data(), patch, plane).transpose();
          }
          if (pg[2])
            for (std::size_t c = 0; c < cout; ++c) (*pg[2])[c] += gm.row(c).sum();
          if (pg[0]) {
            mat<T>(gcol.data(), patch, plane).noalias() = wm.transpose() * gm;
            col2im(gcol.data(), cin, h, w, k, stride, pad, ho, wo, pg[0]->data() + b * cin * h * w);
          }
        }
      },
      "conv2d");
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("upsample expects [B,C,H,W], got " + to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(planes * 4 * h * w);
  auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
  return Tensor<T>::from_op(
      Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
      [planes, h, w](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx) gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
      },
      "upsample_nearest2x");
}

#define MIS_INSTANTIATE(T)                                                                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&);          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> group_norm(const Tensor<T>&, std::size_t, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);

MIS_INSTANTIATE(float)
MIS_INSTANTIATE(double)

}  // namespace mis
