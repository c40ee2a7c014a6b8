#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mis/rng.hpp"
#include "mis/tensor.hpp"
#include "mis/unet.hpp"

namespace mis {

inline constexpr std::size_t kDefaultSamplerSteps = 50;
inline constexpr double kDefaultGuidance = 7.5;
inline constexpr double kDefaultDropout = 0.1;

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  std::size_t steps() const { return betas.size(); }
  /// alpha_bar at t, with t = -1 meaning the clean end (1.0).
  double alpha_bar(long t) const;
};

/// Throws std::invalid_argument unless 0 < beta_start <= beta_end < 1, T >= 1.
NoiseSchedule make_linear_schedule(std::size_t T, double beta_start = 1e-4, double beta_end = 2e-2);

/// sqrt(ab) * z0 + sqrt(1 - ab) * eps. t holds one value, one per set, or
/// one per image of z0 [BZ, N, ...].
template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, std::span<const std::size_t> t, const Tensor<T>& eps,
                   const NoiseSchedule& schedule);

template <typename T>
struct LossResult {
  Tensor<T> loss;
  bool dropped = false;
};

/// (z_t, condition, per-image t, tasks) -> predicted noise.
template <typename T>
using NoisePredictor = std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&, std::span<const double>,
                                               std::span<const TaskCondition>)>;

/// Mean squared error between eps and the model's prediction on
/// q_sample(z0, t, eps). The condition (clean latents or features) and any
/// task conditions are zeroed together when dropout_draw < dropout_p.
template <typename T>
LossResult<T> training_loss(const NoisePredictor<T>& model, const Tensor<T>& z0, const Tensor<T>& condition,
                            std::span<const std::size_t> t, const Tensor<T>& eps, double dropout_draw,
                            const NoiseSchedule& schedule, double dropout_p = kDefaultDropout,
                            std::span<const TaskCondition> tasks = {});

template <typename T>
LossResult<T> training_loss(const UNet<T>& model, const Tensor<T>& z0, const Tensor<T>& condition,
                            std::span<const std::size_t> t, const Tensor<T>& eps, double dropout_draw,
                            const NoiseSchedule& schedule, double dropout_p = kDefaultDropout,
                            std::span<const TaskCondition> tasks = {});

/// eps_uncond + s (eps_cond - eps_uncond), evaluated as (1 - s) u + s c so
/// that s = 0 and s = 1 return an input exactly.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double s);

/// eps_00 + s_I (eps_I0 - eps_00) + s_C (eps_IC - eps_I0).
template <typename T>
Tensor<T> dual_cfg_combine(const Tensor<T>& eps_00, const Tensor<T>& eps_I0, const Tensor<T>& eps_IC, double s_I,
                           double s_C);

/// Descending timesteps, evenly spaced by T / steps and ending at 0.
std::vector<long> ddim_timesteps(std::size_t T, std::size_t steps);

/// One DDIM update from t to t_prev (t_prev = -1 is the clean end). noise is
/// required when eta > 0.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps_hat, long t, long t_prev,
                    const NoiseSchedule& schedule, double eta = 0.0, const Tensor<T>* noise = nullptr);

template <typename T>
using Denoiser = std::function<Tensor<T>(const Tensor<T>& z_t, long t)>;

/// Full DDIM loop from z_T. rng is only drawn from when eta > 0.
template <typename T>
Tensor<T> ddim_sample(const Denoiser<T>& denoise, Tensor<T> z_T, const NoiseSchedule& schedule, std::size_t steps,
                      double eta, Rng& rng);

/// Draws a standard normal tensor.
template <typename T>
Tensor<T> gaussian(Shape shape, Rng& rng);

}  // namespace mis
