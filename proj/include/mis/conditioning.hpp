#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mis/image.hpp"
#include "mis/optim.hpp"
#include "mis/tensor.hpp"
#include "mis/variant.hpp"

namespace mis {

/// Interleaved sin/cos of `position` at geometric frequencies from 1 down
/// to 1e-4: out[2i] = sin(p * f_i), out[2i+1] = cos(p * f_i). dim must be even.
std::vector<double> sinusoidal_embed(double position, std::size_t dim);

/// Rows of sinusoidal_embed for each position: [positions.size(), dim].
template <typename T>
Tensor<T> sinusoidal_table(std::span<const double> positions, std::size_t dim);

// --- external features -----------------------------------------------------

/// Pluggable per-image encoder producing S tokens of dimension D.
class FeatureEncoder {
 public:
  virtual ~FeatureEncoder() = default;
  virtual std::size_t tokens() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string id() const = 0;
  /// Row-major [tokens, dim]. Deterministic for a given image.
  virtual std::vector<float> encode(const Image& image) const = 0;
};

/// Deterministic stand-in encoder. The image is split into grid x grid
/// patches; each patch contributes channel means, channel variances and
/// within-patch gradient energy, mapped to `dim` values by a fixed
/// seeded linear map. A patch only ever influences its own token row.
class PatchStatEncoder final : public FeatureEncoder {
 public:
  static constexpr std::size_t kStatCount = 9;

  explicit PatchStatEncoder(std::size_t grid = 4, std::size_t dim = 32, std::uint64_t seed = 0x5eed);

  std::size_t tokens() const override { return grid_ * grid_; }
  std::size_t dim() const override { return dim_; }
  std::string id() const override;
  std::vector<float> encode(const Image& image) const override;

  std::array<double, kStatCount> patch_stats(const Image& image, std::size_t px, std::size_t py) const;

 private:
  std::size_t grid_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::vector<double> map_;  // [kStatCount, dim]
};

struct ExternalFeatureSet {
  Tensor<float> features;  // [N, S, D]
  std::string encoder_id;
};

ExternalFeatureSet encode_set(const FeatureEncoder& encoder, std::span<const Image> images);

// --- task conditions -------------------------------------------------------

/// World-to-camera rigid transform, row-major 4x4.
class CameraPose {
 public:
  /// Validates R^T R = I (1e-5), det(R) = +1 and last row (0,0,0,1).
  /// Throws std::invalid_argument otherwise; never re-orthonormalizes.
  explicit CameraPose(const std::array<double, 16>& extrinsic);
  static CameraPose identity();
  /// Camera on a horizontal ring around the origin, looking at it.
  static CameraPose look_at_origin(double azimuth, double elevation, double radius);

  const std::array<double, 16>& matrix() const { return m_; }
  std::array<double, 12> top_rows() const;
  std::array<double, 3> apply(const std::array<double, 3>& p) const;

  friend bool operator==(const CameraPose&, const CameraPose&) = default;

 private:
  std::array<double, 16> m_;
};

bool is_rigid(const std::array<double, 16>& m, double tol = 1e-5);

enum class TaskKind { None, Camera, Position };

std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view text);

/// Per-image task payload. A zeroed condition embeds to exact zeros.
struct TaskCondition {
  TaskKind kind = TaskKind::None;
  std::vector<CameraPose> poses;
  std::vector<std::size_t> steps;
  bool zeroed = false;

  std::size_t size() const { return kind == TaskKind::Camera ? poses.size() : steps.size(); }
  bool active() const { return kind != TaskKind::None && !zeroed; }
};

TaskCondition zero_condition(const TaskCondition& cond);

template <typename T>
Tensor<T> zero_condition(const Tensor<T>& cond) {
  return Tensor<T>::zeros(cond.shape());
}

/// Two-layer perceptron, linear -> SiLU -> linear.
template <typename T>
struct Mlp {
  Tensor<T> w1, b1, w2, b2;

  static Mlp create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                    std::size_t out, std::uint64_t seed);
  static Mlp zeros(std::size_t in, std::size_t hidden, std::size_t out);

  std::size_t in_dim() const { return w1.dim(0); }
  std::size_t out_dim() const { return w2.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Flattened top 3x4 extrinsic -> MLP.
template <typename T>
Tensor<T> camera_embed(const CameraPose& pose, const Mlp<T>& mlp);

/// sinusoidal_embed(index, mlp.in_dim()) -> MLP.
template <typename T>
Tensor<T> position_embed(std::size_t index, const Mlp<T>& mlp);

/// Embeds a condition per image: [cond.size(), mlp.out_dim()]. Zeroed or
/// empty conditions give zeros.
template <typename T>
Tensor<T> embed_task(const TaskCondition& cond, const Mlp<T>& mlp);

/// hidden: [BZ, N, ...]; embeddings: [BZ, N, C] where C is the extent of
/// hidden at channel_axis. Adds each image's embedding across all of its
/// spatial or token positions.
template <typename T>
Tensor<T> inject_condition(const Tensor<T>& hidden, const Tensor<T>& embeddings, std::size_t channel_axis);

/// Variant form: MisSa latents are [BZ, N, C, H, W], MisDino features [BZ, N, S, D].
template <typename T>
Tensor<T> inject_condition(const Tensor<T>& hidden, const Tensor<T>& embeddings, Variant variant) {
  return inject_condition(hidden, embeddings, variant == Variant::MisSa ? std::size_t{2} : std::size_t{3});
}

}  // namespace mis
