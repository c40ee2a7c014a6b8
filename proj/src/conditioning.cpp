#include "mis/conditioning.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mis/ops.hpp"
#include "mis/rng.hpp"

namespace mis {

std::string_view to_string(Variant v) { return v == Variant::MisSa ? "mis-sa" : "mis-dino"; }

Variant parse_variant(std::string_view text) {
  if (text == "mis-sa" || text == "mis_sa" || text == "sa") return Variant::MisSa;
  if (text == "mis-dino" || text == "mis_dino" || text == "dino") return Variant::MisDino;
  throw std::invalid_argument("unknown variant: " + std::string(text));
}

std::vector<double> sinusoidal_embed(double position, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw DimensionError("sinusoidal embedding dim must be even, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::pow(10000.0, -exponent);
    out[2 * i] = std::sin(position * freq);
    out[2 * i + 1] = std::cos(position * freq);
  }
  return out;
}

template <typename T>
Tensor<T> sinusoidal_table(std::span<const double> positions, std::size_t dim) {
  std::vector<T> values;
  values.reserve(positions.size() * dim);
  for (double p : positions)
    for (double v : sinusoidal_embed(p, dim)) values.push_back(static_cast<T>(v));
  return Tensor<T>({positions.size(), dim}, std::move(values));
}

// --- stub encoder ----------------------------------------------------------

PatchStatEncoder::PatchStatEncoder(std::size_t grid, std::size_t dim, std::uint64_t seed)
    : grid_(grid), dim_(dim), seed_(seed), map_(kStatCount * dim) {
  if (grid == 0 || dim == 0) throw std::invalid_argument("encoder grid and dim must be positive");
  Rng rng(mix_seed(seed, 0xfea7));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(kStatCount)));
  for (auto& v : map_) v = dist(rng);
}

std::string PatchStatEncoder::id() const {
  return "patch-stat/v1/g" + std::to_string(grid_) + "d" + std::to_string(dim_) + "s" + std::to_string(seed_);
}

std::array<double, PatchStatEncoder::kStatCount> PatchStatEncoder::patch_stats(const Image& image, std::size_t px,
                                                                                std::size_t py) const {
  const std::size_t pw = image.width / grid_, ph = image.height / grid_;
  const std::size_t x0 = px * pw, y0 = py * ph;
  std::array<double, kStatCount> stats{};
  const double count = static_cast<double>(pw * ph);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0, grad = 0;
    std::size_t grad_terms = 0;
    for (std::size_t y = y0; y < y0 + ph; ++y)
      for (std::size_t x = x0; x < x0 + pw; ++x) {
        const double v = image.at(x, y, c) / 255.0;
        s += v;
        s2 += v * v;
        if (x + 1 < x0 + pw) {
          const double d = image.at(x + 1, y, c) / 255.0 - v;
          grad += d * d;
          ++grad_terms;
        }
        if (y + 1 < y0 + ph) {
          const double d = image.at(x, y + 1, c) / 255.0 - v;
          grad += d * d;
          ++grad_terms;
        }
      }
    const double m = s / count;
    stats[c] = m;
    // Variance and gradient energy rescaled toward the range of the means.
    stats[3 + c] = 4.0 * std::max(0.0, s2 / count - m * m);
    stats[6 + c] = grad_terms ? 4.0 * grad / static_cast<double>(grad_terms) : 0.0;
  }
  return stats;
}

std::vector<float> PatchStatEncoder::encode(const Image& image) const {
  if (image.width == 0 || image.height == 0 || image.width % grid_ != 0 || image.height % grid_ != 0)
    throw DimensionError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " does not split into a " + std::to_string(grid_) + "x" + std::to_string(grid_) +
                         " patch grid");
  std::vector<float> out(tokens() * dim_);
  for (std::size_t py = 0; py < grid_; ++py)
    for (std::size_t px = 0; px < grid_; ++px) {
      const auto stats = patch_stats(image, px, py);
      float* row = out.data() + (py * grid_ + px) * dim_;
      for (std::size_t d = 0; d < dim_; ++d) {
        double acc = 0;
        for (std::size_t s = 0; s < kStatCount; ++s) acc += stats[s] * map_[s * dim_ + d];
        row[d] = static_cast<float>(acc);
      }
    }
  return out;
}

ExternalFeatureSet encode_set(const FeatureEncoder& encoder, std::span<const Image> images) {
  std::vector<float> all;
  all.reserve(images.size() * encoder.tokens() * encoder.dim());
  for (const auto& img : images) {
    auto f = encoder.encode(img);
    all.insert(all.end(), f.begin(), f.end());
  }
  return {Tensor<float>({images.size(), encoder.tokens(), encoder.dim()}, std::move(all)), encoder.id()};
}

// --- camera -----------------------------------------------------------------

bool is_rigid(const std::array<double, 16>& m, double tol) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += m[k * 4 + i] * m[k * 4 + j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  const double det = m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8]) +
                     m[2] * (m[4] * m[9] - m[5] * m[8]);
  if (std::abs(det - 1.0) > tol) return false;
  return m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && m[15] == 1.0;
}

CameraPose::CameraPose(const std::array<double, 16>& extrinsic) : m_(extrinsic) {
  if (!is_rigid(extrinsic)) throw std::invalid_argument("camera extrinsic is not a rigid transform");
}

CameraPose CameraPose::identity() {
  return CameraPose({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
}

CameraPose CameraPose::look_at_origin(double azimuth, double elevation, double radius) {
  const std::array<double, 3> c{radius * std::cos(elevation) * std::cos(azimuth), radius * std::sin(elevation),
                                radius * std::cos(elevation) * std::sin(azimuth)};
  auto normalize = [](std::array<double, 3> v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return std::array<double, 3>{v[0] / n, v[1] / n, v[2] / n};
  };
  auto cross = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return std::array<double, 3>{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  };
  const auto f = normalize({-c[0], -c[1], -c[2]});
  const auto r = normalize(cross({0, 1, 0}, f));
  const auto u = cross(f, r);
  std::array<double, 16> m{};
  const std::array<std::array<double, 3>, 3> rows{r, u, f};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i * 4 + j] = rows[i][j];
    m[i * 4 + 3] = -(rows[i][0] * c[0] + rows[i][1] * c[1] + rows[i][2] * c[2]);
  }
  m[15] = 1.0;
  return CameraPose(m);
}

std::array<double, 12> CameraPose::top_rows() const {
  std::array<double, 12> out{};
  std::copy_n(m_.begin(), 12, out.begin());
  return out;
}

std::array<double, 3> CameraPose::apply(const std::array<double, 3>& p) const {
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = m_[i * 4] * p[0] + m_[i * 4 + 1] * p[1] + m_[i * 4 + 2] * p[2] + m_[i * 4 + 3];
  return out;
}

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Camera: return "camera";
    case TaskKind::Position: return "position";
    default: return "none";
  }
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "none") return TaskKind::None;
  if (text == "camera") return TaskKind::Camera;
  if (text == "position") return TaskKind::Position;
  throw std::invalid_argument("unknown task kind: " + std::string(text));
}

TaskCondition zero_condition(const TaskCondition& cond) {
  TaskCondition out = cond;
  out.zeroed = true;
  return out;
}

// --- embedders --------------------------------------------------------------

template <typename T>
Mlp<T> Mlp<T>::create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t out, std::uint64_t seed) {
  Mlp m;
  m.w1 = store.add_uniform(prefix + ".w1", {in, hidden}, in, seed);
  m.b1 = store.add(prefix + ".b1", {hidden});
  m.w2 = store.add_uniform(prefix + ".w2", {hidden, out}, hidden, seed);
  m.b2 = store.add(prefix + ".b2", {out});
  return m;
}

template <typename T>
Mlp<T> Mlp<T>::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
  return {Tensor<T>::zeros({in, hidden}), Tensor<T>::zeros({hidden}), Tensor<T>::zeros({hidden, out}),
          Tensor<T>::zeros({out})};
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  return linear(silu(linear(x, w1, b1)), w2, b2);
}

template <typename T>
Tensor<T> camera_embed(const CameraPose& pose, const Mlp<T>& mlp) {
  if (mlp.in_dim() != 12) throw DimensionError("camera embedder expects 12 inputs");
  auto top = pose.top_rows();
  std::vector<T> v(top.begin(), top.end());
  return reshape(mlp(Tensor<T>({1, 12}, std::move(v))), {mlp.out_dim()});
}

template <typename T>
Tensor<T> position_embed(std::size_t index, const Mlp<T>& mlp) {
  std::vector<double> pos{static_cast<double>(index)};
  return reshape(mlp(sinusoidal_table<T>(pos, mlp.in_dim())), {mlp.out_dim()});
}

template <typename T>
Tensor<T> embed_task(const TaskCondition& cond, const Mlp<T>& mlp) {
  const std::size_t n = cond.size();
  if (!cond.active() || n == 0) return Tensor<T>::zeros({n, mlp.out_dim()});
  if (cond.kind == TaskKind::Camera) {
    std::vector<T> flat;
    flat.reserve(n * 12);
    for (const auto& p : cond.poses)
      for (double v : p.top_rows()) flat.push_back(static_cast<T>(v));
    return mlp(Tensor<T>({n, 12}, std::move(flat)));
  }
  std::vector<double> pos(cond.steps.begin(), cond.steps.end());
  return mlp(sinusoidal_table<T>(pos, mlp.in_dim()));
}

template <typename T>
Tensor<T> inject_condition(const Tensor<T>& hidden, const Tensor<T>& embeddings, std::size_t channel_axis) {
  if (hidden.rank() < 3 || channel_axis < 2 || channel_axis >= hidden.rank())
    throw DimensionError("inject_condition: hidden " + to_string(hidden.shape()) + " with channel axis " +
                         std::to_string(channel_axis));
  const Shape& s = hidden.shape();
  if (embeddings.shape() != Shape{s[0], s[1], s[channel_axis]})
    throw DimensionError("inject_condition: embeddings " + to_string(embeddings.shape()) + " do not match hidden " +
                         to_string(s) + " at channel axis " + std::to_string(channel_axis));
  Shape b(s.size(), 1);
  b[0] = s[0];
  b[1] = s[1];
  b[channel_axis] = s[channel_axis];
  return add(hidden, reshape(embeddings, b));
}

#define MIS_INSTANTIATE(T)                                                               \
  template Tensor<T> sinusoidal_table(std::span<const double>, std::size_t);             \
  template struct Mlp<T>;                                                                \
  template Tensor<T> camera_embed(const CameraPose&, const Mlp<T>&);                     \
  template Tensor<T> position_embed(std::size_t, const Mlp<T>&);                         \
  template Tensor<T> embed_task(const TaskCondition&, const Mlp<T>&);                    \
  template Tensor<T> inject_condition(const Tensor<T>&, const Tensor<T>&, std::size_t);

MIS_INSTANTIATE(float)
MIS_INSTANTIATE(double)

}  // namespace mis
