#include "mis/diffusion.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "mis/ops.hpp"

namespace mis {

double NoiseSchedule::alpha_bar(long t) const {
  if (t == -1) return 1.0;
  if (t < 0 || static_cast<std::size_t>(t) >= steps())
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) + ", " +
                                std::to_string(beta_end));
  NoiseSchedule s;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

namespace {

// Expands one / per-set / per-image timesteps to one per leading image.
std::vector<std::size_t> per_image_steps(std::span<const std::size_t> t, std::size_t bz, std::size_t n) {
  std::vector<std::size_t> out(bz * n);
  if (t.size() == 1) {
    std::fill(out.begin(), out.end(), t[0]);
  } else if (t.size() == bz) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i / n];
  } else if (t.size() == bz * n) {
    out.assign(t.begin(), t.end());
  } else {
    throw DimensionError("got " + std::to_string(t.size()) + " timesteps for " + std::to_string(bz) + " sets of " +
                         std::to_string(n));
  }
  return out;
}

// Per-image scale as a tensor broadcastable against [BZ, N, ...].
template <typename T>
Tensor<T> per_image_scale(const std::vector<double>& v, const Shape& like, std::size_t bz, std::size_t n) {
  Shape s(like.size(), 1);
  s[0] = bz;
  s[1] = n;
  std::vector<T> vals(v.begin(), v.end());
  return Tensor<T>(s, std::move(vals));
}

}  // namespace

template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, std::span<const std::size_t> t, const Tensor<T>& eps,
                   const NoiseSchedule& schedule) {
  if (z0.shape() != eps.shape())
    throw DimensionError("q_sample: z0 " + to_string(z0.shape()) + " vs eps " + to_string(eps.shape()));
  if (z0.rank() < 2) throw DimensionError("q_sample expects [BZ, N, ...], got " + to_string(z0.shape()));
  const std::size_t bz = z0.dim(0), n = z0.dim(1);
  const auto steps = per_image_steps(t, bz, n);
  std::vector<double> a(steps.size()), b(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double ab = schedule.alpha_bar(static_cast<long>(steps[i]));
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  return add(mul(z0, per_image_scale<T>(a, z0.shape(), bz, n)), mul(eps, per_image_scale<T>(b, z0.shape(), bz, n)));
}

template <typename T>
LossResult<T> training_loss(const NoisePredictor<T>& model, const Tensor<T>& z0, const Tensor<T>& condition,
                            std::span<const std::size_t> t, const Tensor<T>& eps, double dropout_draw,
                            const NoiseSchedule& schedule, double dropout_p, std::span<const TaskCondition> tasks) {
  LossResult<T> out;
  out.dropped = dropout_draw < dropout_p;
  const Tensor<T> cond = out.dropped ? zero_condition(condition) : condition;
  std::vector<TaskCondition> task_copy(tasks.begin(), tasks.end());
  if (out.dropped)
    for (auto& tc : task_copy) tc = zero_condition(tc);

  const auto z_t = q_sample(z0, t, eps, schedule);
  const auto steps = per_image_steps(t, z0.dim(0), z0.dim(1));
  const std::vector<double> t_model(steps.begin(), steps.end());
  const auto pred = model(z_t, cond, t_model, task_copy);
  out.loss = mean(square(sub(eps, pred)));
  return out;
}

template <typename T>
LossResult<T> training_loss(const UNet<T>& model, const Tensor<T>& z0, const Tensor<T>& condition,
                            std::span<const std::size_t> t, const Tensor<T>& eps, double dropout_draw,
                            const NoiseSchedule& schedule, double dropout_p, std::span<const TaskCondition> tasks) {
  const NoisePredictor<T> fn = [&model](const Tensor<T>& z, const Tensor<T>& c, std::span<const double> ts,
                                        std::span<const TaskCondition> tc) { return model.forward(z, c, ts, tc); };
  return training_loss(fn, z0, condition, t, eps, dropout_draw, schedule, dropout_p, tasks);
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double s) {
  if (eps_uncond.shape() != eps_cond.shape())
    throw DimensionError("cfg_combine: " + to_string(eps_uncond.shape()) + " vs " + to_string(eps_cond.shape()));
  const T a = static_cast<T>(1.0 - s), b = static_cast<T>(s);
  std::vector<T> v(eps_cond.numel());
  auto u = eps_uncond.data();
  auto c = eps_cond.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * u[i] + b * c[i];
  return Tensor<T>(eps_cond.shape(), std::move(v));
}

template <typename T>
Tensor<T> dual_cfg_combine(const Tensor<T>& eps_00, const Tensor<T>& eps_I0, const Tensor<T>& eps_IC, double s_I,
                           double s_C) {
  if (eps_00.shape() != eps_I0.shape() || eps_00.shape() != eps_IC.shape())
    throw DimensionError("dual_cfg_combine: mismatched shapes " + to_string(eps_00.shape()) + ", " +
                         to_string(eps_I0.shape()) + ", " + to_string(eps_IC.shape()));
  const T a = static_cast<T>(1.0 - s_I), b = static_cast<T>(s_I - s_C), c = static_cast<T>(s_C);
  std::vector<T> v(eps_00.numel());
  auto e0 = eps_00.data();
  auto e1 = eps_I0.data();
  auto e2 = eps_IC.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * e0[i] + b * e1[i] + c * e2[i];
  return Tensor<T>(eps_00.shape(), std::move(v));
}

std::vector<long> ddim_timesteps(std::size_t T, std::size_t steps) {
  if (steps == 0 || steps > T)
    throw std::invalid_argument("sampler steps " + std::to_string(steps) + " must be in [1, " + std::to_string(T) +
                                "]");
  const std::size_t stride = T / steps;
  std::vector<long> out(steps);
  for (std::size_t k = 0; k < steps; ++k) out[k] = static_cast<long>((steps - 1 - k) * stride);
  return out;
}

template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps_hat, long t, long t_prev,
                    const NoiseSchedule& schedule, double eta, const Tensor<T>* noise) {
  if (t_prev >= t)
    throw std::invalid_argument("ddim_step needs t_prev < t, got " + std::to_string(t_prev) + " >= " +
                                std::to_string(t));
  if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("eta must lie in [0, 1]");
  if (z_t.shape() != eps_hat.shape())
    throw DimensionError("ddim_step: z_t " + to_string(z_t.shape()) + " vs eps " + to_string(eps_hat.shape()));
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
  if (sigma > 0.0 && (!noise || noise->shape() != z_t.shape()))
    throw DimensionError("ddim_step with eta > 0 needs a noise tensor shaped like z_t");
  const double sq_ab_t = std::sqrt(ab_t), sq_1m_ab_t = std::sqrt(1.0 - ab_t);
  const double sq_ab_prev = std::sqrt(ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  std::vector<T> out(z_t.numel());
  auto z = z_t.data();
  auto e = eps_hat.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (static_cast<double>(z[i]) - sq_1m_ab_t * static_cast<double>(e[i])) / sq_ab_t;
    double v = sq_ab_prev * x0 + dir * static_cast<double>(e[i]);
    if (sigma > 0.0) v += sigma * static_cast<double>(noise->data()[i]);
    out[i] = static_cast<T>(v);
  }
  return Tensor<T>(z_t.shape(), std::move(out));
}

template <typename T>
Tensor<T> gaussian(Shape shape, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> ddim_sample(const Denoiser<T>& denoise, Tensor<T> z, const NoiseSchedule& schedule, std::size_t steps,
                      double eta, Rng& rng) {
  const auto ts = ddim_timesteps(schedule.steps(), steps);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const long t = ts[k];
    const long t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
    const auto eps = denoise(z, t);
    if (eta > 0.0) {
      const auto noise = gaussian<T>(z.shape(), rng);
      z = ddim_step(z, eps, t, t_prev, schedule, eta, &noise);
    } else {
      z = ddim_step(z, eps, t, t_prev, schedule, 0.0);
    }
  }
  return z;
}

#define MIS_INSTANTIATE(T)                                                                                     \
  template Tensor<T> q_sample(const Tensor<T>&, std::span<const std::size_t>, const Tensor<T>&,                \
                              const NoiseSchedule&);                                                           \
  template LossResult<T> training_loss(const NoisePredictor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                       std::span<const std::size_t>, const Tensor<T>&, double,                 \
                                       const NoiseSchedule&, double, std::span<const TaskCondition>);          \
  template LossResult<T> training_loss(const UNet<T>&, const Tensor<T>&, const Tensor<T>&,                     \
                                       std::span<const std::size_t>, const Tensor<T>&, double,                 \
                                       const NoiseSchedule&, double, std::span<const TaskCondition>);          \
  template Tensor<T> cfg_combine(const Tensor<T>&, const Tensor<T>&, double);                                  \
  template Tensor<T> dual_cfg_combine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, double);   \
  template Tensor<T> ddim_step(const Tensor<T>&, const Tensor<T>&, long, long, const NoiseSchedule&, double,    \
                               const Tensor<T>*);                                                              \
  template Tensor<T> gaussian(Shape, Rng&);                                                                    \
  template Tensor<T> ddim_sample(const Denoiser<T>&, Tensor<T>, const NoiseSchedule&, std::size_t, double, Rng&);

MIS_INSTANTIATE(float)
MIS_INSTANTIATE(double)

}  // namespace mis
