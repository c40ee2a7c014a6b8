#include "mis/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "mis/eigen_maps.hpp"

namespace mis {

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

namespace {

// Flat source index in `in` for every flat position of `out`, where `in`
// broadcasts to `out`.
std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t offset = r - in.size();
  Shape in_strides = strides_of(in);
  std::vector<std::size_t> stride(r, 0);
  for (std::size_t i = offset; i < r; ++i)
    stride[i] = in[i - offset] == 1 ? 0 : in_strides[i - offset];

  std::vector<std::size_t> map(numel(out));
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = src;
    for (std::size_t axis = r; axis-- > 0;) {
      if (++idx[axis] < out[axis]) {
        src += stride[axis];
        break;
      }
      src -= stride[axis] * (out[axis] - 1);
      idx[axis] = 0;
    }
  }
  return map;
}

template <typename T, typename Fwd, typename BwdA, typename BwdB>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, std::string_view op, Fwd fwd, BwdA bwd_a,
                           BwdB bwd_b) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  std::vector<T> out(n);
  auto av = a.data();
  auto bv = b.data();

  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    return Tensor<T>::from_op(
        std::move(out_shape), std::move(out), {a, b},
        [a, b, bwd_a, bwd_b](std::span<const T> g, std::span<std::vector<T>* const> pg) {
          auto av = a.data();
          auto bv = b.data();
          if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += bwd_a(g[i], av[i], bv[i]);
          if (pg[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += bwd_b(g[i], av[i], bv[i]);
        },
        op);
  }

  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(a.shape(), out_shape));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(b.shape(), out_shape));
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[(*ia)[i]], bv[(*ib)[i]]);
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {a, b},
      [a, b, ia, ib, bwd_a, bwd_b](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto av = a.data();
        auto bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          T x = av[(*ia)[i]], y = bv[(*ib)[i]];
          if (pg[0]) (*pg[0])[(*ia)[i]] += bwd_a(g[i], x, y);
          if (pg[1]) (*pg[1])[(*ib)[i]] += bwd_b(g[i], x, y);
        }
      },
      op);
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& a, std::string_view op, Fwd fwd, Bwd bwd) {
  auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return Tensor<T>::from_op(
      a.shape(), std::move(out), {a},
      [a, bwd](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto av = a.data();
        auto& ga = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += bwd(g[i], av[i]);
      },
      op);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, "scale", [s](T x) { return x * s; }, [s](T g, T) { return g * s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, "add_scalar", [s](T x) { return x + s; }, [](T g, T) { return g; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, "square", [](T x) { return x * x; }, [](T g, T x) { return T(2) * x * g; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return unary(
      a, "silu", [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T g, T x) {
        T s = T(1) / (T(1) + std::exp(-x));
        return g * s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::from_op(
      Shape{}, {total}, {a},
      [](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        for (auto& v : *pg[0]) v += g[0];
      },
      "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back();
  const std::size_t kb = b.shape()[b.rank() - 2], n = b.shape().back();
  if (k != kb)
    throw DimensionError("matmul inner dimension mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));

  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);

  if (batch_b.empty()) {
    // Shared right operand: one GEMM over all leading rows of a.
    const std::size_t rows = numel(batch_a) * m;
    Shape out_shape = batch_a;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(rows * n);
    mat<T>(out.data(), rows, n).noalias() = cmat<T>(a.data().data(), rows, k) * cmat<T>(b.data().data(), k, n);
    return Tensor<T>::from_op(
        std::move(out_shape), std::move(out), {a, b},
        [a, b, rows, k, n](std::span<const T> g, std::span<std::vector<T>* const> pg) {
          auto gm = cmat<T>(g.data(), rows, n);
          if (pg[0]) mat<T>(pg[0]->data(), rows, k).noalias() += gm * cmat<T>(b.data().data(), k, n).transpose();
          if (pg[1]) mat<T>(pg[1]->data(), k, n).noalias() += cmat<T>(a.data().data(), rows, k).transpose() * gm;
        },
        "matmul");
  }

  Shape batch = broadcast_shapes(batch_a, batch_b);
  auto map_a = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(batch_a, batch));
  auto map_b = std::make_shared<std::vector<std::size_t>>(broadcast_index_map(batch_b, batch));
  const std::size_t nb = numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(nb * m * n);
  for (std::size_t i = 0; i < nb; ++i) {
    mat<T>(out.data() + i * m * n, m, n).noalias() =
        cmat<T>(a.data().data() + (*map_a)[i] * m * k, m, k) * cmat<T>(b.data().data() + (*map_b)[i] * k * n, k, n);
  }
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {a, b},
      [a, b, map_a, map_b, m, k, n](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        for (std::size_t i = 0; i < map_a->size(); ++i) {
          auto gm = cmat<T>(g.data() + i * m * n, m, n);
          const std::size_t oa = (*map_a)[i] * m * k, ob = (*map_b)[i] * k * n;
          if (pg[0]) mat<T>(pg[0]->data() + oa, m, k).noalias() += gm * cmat<T>(b.data().data() + ob, k, n).transpose();
          if (pg[1]) mat<T>(pg[1]->data() + ob, k, n).noalias() += cmat<T>(a.data().data() + oa, m, k).transpose() * gm;
        }
      },
      "matmul");
}

template <typename T>
Tensor<T> masked_softmax_lastdim(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() == 0) throw DimensionError("softmax on a scalar");
  if (broadcast_shapes(x.shape(), bias.shape()) != x.shape())
    throw DimensionError("softmax bias " + to_string(bias.shape()) + " does not broadcast to " + to_string(x.shape()));
  const std::size_t len = x.shape().back();
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  auto bias_map = broadcast_index_map(bias.shape(), x.shape());
  const T masked_below = mask_sentinel<T>() / T(2);

  std::vector<T> out(x.numel(), T(0));
  auto xv = x.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    T m = mask_sentinel<T>();
    bool any = false;
    for (std::size_t j = 0; j < len; ++j) {
      T b = bv[bias_map[base + j]];
      if (b <= masked_below) continue;
      any = true;
      m = std::max(m, xv[base + j] + b);
    }
    if (!any) continue;
    T total = 0;
    for (std::size_t j = 0; j < len; ++j) {
      T b = bv[bias_map[base + j]];
      if (b <= masked_below) continue;
      T e = std::exp(xv[base + j] + b - m);
      out[base + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < len; ++j) out[base + j] /= total;
  }

  auto probs = std::make_shared<std::vector<T>>(out);
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {x},
      [probs, rows, len](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto& gx = *pg[0];
        const auto& p = *probs;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * len;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j] * p[base + j];
          for (std::size_t j = 0; j < len; ++j) gx[base + j] += p[base + j] * (g[base + j] - dot);
        }
      },
      "masked_softmax");
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  return masked_softmax_lastdim(x, Tensor<T>::zeros(Shape{1}));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::from_op(
      std::move(shape), std::move(out), {x},
      [](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const std::size_t> order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permutation rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw DimensionError("axis order is not a permutation");
    seen[o] = true;
  }
  Shape in_strides = strides_of(x.shape());
  Shape out_shape(r);
  Shape step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[order[i]];
    step[i] = in_strides[order[i]];
  }

  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t s = 0;
  for (std::size_t flat = 0; flat < src->size(); ++flat) {
    (*src)[flat] = s;
    for (std::size_t axis = r; axis-- > 0;) {
      if (++idx[axis] < out_shape[axis]) {
        s += step[axis];
        break;
      }
      s -= step[axis] * (out_shape[axis] - 1);
      idx[axis] = 0;
    }
  }
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src)[i]];
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {x},
      [src](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[(*src)[i]] += g[i];
      },
      "permute");
}

template <typename T>
Tensor<T> reshape_permute(const Tensor<T>& x, Shape new_shape, std::span<const std::size_t> order) {
  return permute(reshape(x, std::move(new_shape)), order);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.shape()[axis])
    throw DimensionError("bad slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  const std::size_t outer = numel(Shape(x.shape().begin(), x.shape().begin() + axis));
  const std::size_t inner = numel(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  const std::size_t full = x.shape()[axis], width = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = width;
  std::vector<T> out(outer * width * inner);
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + (o * full + begin) * inner, width * inner, out.begin() + o * width * inner);
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {x},
      [outer, inner, full, begin, width](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        auto& gx = *pg[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < width * inner; ++i) gx[(o * full + begin) * inner + i] += g[o * width * inner + i];
      },
      "slice");
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of no tensors");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat axis out of range for " + to_string(ref));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw DimensionError("concat rank mismatch: " + to_string(ref) + " vs " + to_string(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != ref[i])
        throw DimensionError("concat shape mismatch: " + to_string(ref) + " vs " + to_string(s));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  const std::size_t outer = numel(Shape(ref.begin(), ref.begin() + axis));
  const std::size_t inner = numel(Shape(ref.begin() + axis + 1, ref.end()));
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * widths[p] * inner, widths[p] * inner,
                  out.begin() + (o * total + offset) * inner);
    offset += widths[p];
  }
  std::vector<Tensor<T>> parents(parts.begin(), parts.end());
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), std::move(parents),
      [widths, outer, inner, total](std::span<const T> g, std::span<std::vector<T>* const> pg) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          if (pg[p]) {
            auto& gp = *pg[p];
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[p] * inner; ++i)
                gp[o * widths[p] * inner + i] += g[(o * total + offset) * inner + i];
          }
          offset += widths[p];
        }
      },
      "concat");
}

#define MIS_INSTANTIATE(T)                                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                     \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                \
  template Tensor<T> square(const Tensor<T>&);                                                       \
  template Tensor<T> silu(const Tensor<T>&);                                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                          \
  template Tensor<T> mean(const Tensor<T>&);                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> masked_softmax_lastdim(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
  template Tensor<T> permute(const Tensor<T>&, std::span<const std::size_t>);                        \
  template Tensor<T> reshape_permute(const Tensor<T>&, Shape, std::span<const std::size_t>);         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                 \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);

MIS_INSTANTIATE(float)
MIS_INSTANTIATE(double)

}  // namespace mis
