#include "mis/engine.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mis/dataset.hpp"
#include "mis/ops.hpp"

namespace mis {

template <typename T>
ContextWindow<T>::ContextWindow(std::size_t capacity) : capacity_(capacity) {}

template <typename T>
void ContextWindow<T>::push(Tensor<T> value, std::size_t index) {
  if (capacity_ == 0) return;
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back({std::move(value), index});
}

void GenerationPlan::validate(const UNetConfig& model) const {
  if (variant != model.variant)
    throw std::invalid_argument("plan is for " + std::string(to_string(variant)) + " but the model is " +
                                std::string(to_string(model.variant)));
  const std::size_t expected = model.block_size_for_variant();
  if (per_iteration != expected)
    throw std::invalid_argument(std::string(to_string(variant)) + " emits " + std::to_string(expected) +
                                " image(s) per iteration, plan asks for " + std::to_string(per_iteration));
  if (steps == 0) throw std::invalid_argument("sampler steps must be positive");
  if (eta < 0.0) throw std::invalid_argument("eta must be non-negative");
  if (task.kind != TaskKind::None && task.kind != model.task)
    throw std::invalid_argument("plan task " + std::string(to_string(task.kind)) + " does not match model task " +
                                std::string(to_string(model.task)));
}

namespace {

std::shared_ptr<const FeatureEncoder> default_encoder(const UNetConfig& c) {
  if (c.variant != Variant::MisDino) return nullptr;
  const auto grid = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(c.feature_tokens))));
  if (grid * grid != c.feature_tokens)
    throw std::invalid_argument("no default encoder for " + std::to_string(c.feature_tokens) +
                                " feature tokens (needs a square grid)");
  return std::make_shared<PatchStatEncoder>(grid, c.feature_dim);
}

/// Condition entries for each model slot: padding gets the identity pose or
/// step 0, everything else its own sequence position.
TaskCondition slot_condition(const TaskCondition& plan_task, std::span<const std::optional<std::size_t>> slots) {
  TaskCondition out;
  out.kind = plan_task.kind;
  for (const auto& s : slots) {
    if (plan_task.kind == TaskKind::Camera) {
      if (s && *s >= plan_task.poses.size())
        throw std::invalid_argument("task has no camera pose for image " + std::to_string(*s));
      out.poses.push_back(s ? plan_task.poses[*s] : CameraPose::identity());
    } else {
      if (s && *s >= plan_task.steps.size())
        throw std::invalid_argument("task has no step for image " + std::to_string(*s));
      out.steps.push_back(s ? plan_task.steps[*s] : 0);
    }
  }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  std::vector<Tensor<T>> parts;
  parts.reserve(items.size());
  for (const auto& x : items) {
    Shape s{1, 1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    parts.push_back(reshape(x, s));
  }
  return concat(std::span<const Tensor<T>>(parts), 1);
}

}  // namespace

template <typename T>
AutoregressiveEngine<T>::AutoregressiveEngine(const UNet<T>& model, NoiseSchedule schedule,
                                              std::shared_ptr<const FeatureEncoder> encoder, std::size_t patch)
    : model_(model), schedule_(std::move(schedule)), encoder_(std::move(encoder)), patch_(patch) {
  const auto& c = model_.config();
  if (c.variant == Variant::MisDino) {
    if (!encoder_) encoder_ = default_encoder(c);
    if (encoder_->tokens() != c.feature_tokens || encoder_->dim() != c.feature_dim)
      throw std::invalid_argument("encoder " + encoder_->id() + " does not produce the model's feature shape");
  }
}

template <typename T>
Tensor<T> AutoregressiveEngine<T>::context_value(const Tensor<T>& latent) const {
  if (model_.config().variant == Variant::MisSa) return latent;
  const auto features = encoder_->encode(ae_decode(latent, patch_));
  return Tensor<float>({encoder_->tokens(), encoder_->dim()}, features).template cast<T>();
}

template <typename T>
Tensor<T> AutoregressiveEngine<T>::predict(const Tensor<T>& noisy, const Tensor<T>& context, double t,
                                           const TaskCondition* task) const {
  const double ts[1] = {t};
  if (!task) return model_.forward(noisy, context, Timesteps(ts, 1));
  return model_.forward(noisy, context, Timesteps(ts, 1), std::span<const TaskCondition>(task, 1));
}

template <typename T>
std::vector<Tensor<T>> AutoregressiveEngine<T>::generate_next(const ContextWindow<T>& ctx, const GenerationPlan& plan,
                                                              std::size_t first_index, Rng& rng) {
  const auto& c = model_.config();
  plan.validate(c);
  if (ctx.size() > plan.window || ctx.size() > ctx.capacity())
    throw std::logic_error("context of " + std::to_string(ctx.size()) + " images exceeds the window of " +
                           std::to_string(plan.window));

  const bool sa = c.variant == Variant::MisSa;
  const std::size_t b = plan.per_iteration, w = ctx.size();
  // MisSa sets must split into whole blocks; zero clean latents fill the front.
  const std::size_t pad = sa ? (b - w % b) % b : 0;
  const std::size_t n = pad + w + b;
  const Shape latent{c.latent_channels, c.latent_height, c.latent_width};

  std::vector<std::optional<std::size_t>> slots(pad);
  IterationInfo info{iterations_, first_index, {}, n};
  std::vector<Tensor<T>> ctx_items;
  const Shape item_shape = sa ? latent : Shape{c.feature_tokens, c.feature_dim};
  for (std::size_t i = 0; i < pad; ++i) ctx_items.push_back(Tensor<T>::zeros(item_shape));
  for (const auto& e : ctx.entries()) {
    if (e.value.shape() != item_shape)
      throw DimensionError("context entry " + to_string(e.value.shape()) + " does not match " +
                           to_string(item_shape));
    ctx_items.push_back(e.value);
    slots.push_back(e.index);
    info.context_indices.push_back(e.index);
  }
  for (std::size_t j = 0; j < b; ++j) {
    ctx_items.push_back(Tensor<T>::zeros(item_shape));
    slots.push_back(first_index + j);
  }
  const Tensor<T> context = stack(ctx_items);
  const Tensor<T> no_context = model_.zero_context(1, n);
  const Tensor<T> noisy_prefix = Tensor<T>::zeros(Shape{1, pad + w, latent[0], latent[1], latent[2]});

  const bool use_task = plan.task.active() && c.task != TaskKind::None;
  std::optional<TaskCondition> task, task_off;
  if (use_task) {
    task = slot_condition(plan.task, slots);
    task_off = zero_condition(*task);
  }
  const bool dual = use_task && plan.guidance.task_scale.has_value();
  const double s = plan.guidance.scale;

  max_context_ = std::max(max_context_, w);
  if (observer_) observer_(info);

  Denoiser<T> denoise = [&](const Tensor<T>& z_t, long t) {
    const Tensor<T> noisy = pad + w ? concat({noisy_prefix, z_t}, 1) : z_t;
    auto tail = [&](const Tensor<T>& eps) { return slice(eps, 1, pad + w, n); };
    const double td = static_cast<double>(t);
    const TaskCondition* on = task ? &*task : nullptr;
    const TaskCondition* off = task_off ? &*task_off : nullptr;
    if (dual) {
      auto e00 = tail(predict(noisy, no_context, td, off));
      auto eI0 = tail(predict(noisy, context, td, off));
      auto eIC = tail(predict(noisy, context, td, on));
      return dual_cfg_combine(e00, eI0, eIC, s, *plan.guidance.task_scale);
    }
    auto cond = tail(predict(noisy, context, td, on));
    // With nothing to condition on both branches are the same call.
    if (s == 1.0 || (w == 0 && !use_task)) return cond;
    auto uncond = tail(predict(noisy, no_context, td, off));
    return cfg_combine(uncond, cond, s);
  };

  auto z_T = gaussian<T>(Shape{1, b, latent[0], latent[1], latent[2]}, rng);
  auto z0 = ddim_sample(denoise, z_T, schedule_, plan.steps, plan.eta, rng);
  ++iterations_;

  std::vector<Tensor<T>> out;
  for (std::size_t j = 0; j < b; ++j) out.push_back(reshape(slice(z0, 1, j, j + 1), latent));
  return out;
}

template <typename T>
std::vector<Tensor<T>> AutoregressiveEngine<T>::run(std::span<const Tensor<T>> seed_latents,
                                                    const GenerationPlan& plan) {
  plan.validate(model_.config());
  if (seed_latents.size() > plan.window)
    throw std::invalid_argument(std::to_string(seed_latents.size()) + " seed images exceed the context window of " +
                                std::to_string(plan.window));
  if (plan.task.active() && plan.task.size() < seed_latents.size() + plan.total)
    throw std::invalid_argument("task covers " + std::to_string(plan.task.size()) + " images, need " +
                                std::to_string(seed_latents.size() + plan.total));

  ContextWindow<T> ctx(plan.window);
  std::size_t index = 0;
  for (const auto& z : seed_latents) ctx.push(context_value(z), index++);

  std::vector<Tensor<T>> out;
  for (std::size_t k = 0; out.size() < plan.total; ++k) {
    Rng rng = make_rng(plan.seed, k);
    for (auto& z : generate_next(ctx, plan, index, rng)) {
      if (out.size() == plan.total) break;
      ctx.push(context_value(z), index++);
      out.push_back(std::move(z));
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> sample_unconditional(const UNet<T>& model, const NoiseSchedule& schedule,
                                            const GenerationPlan& plan, Rng& rng) {
  const auto& c = model.config();
  plan.validate(c);
  const std::size_t b = plan.per_iteration;
  const Shape latent{c.latent_channels, c.latent_height, c.latent_width};
  const Tensor<T> ctx = model.zero_context(1, b);
  Denoiser<T> denoise = [&](const Tensor<T>& z_t, long t) {
    const double ts[1] = {static_cast<double>(t)};
    return model.forward(z_t, ctx, Timesteps(ts, 1));
  };
  auto z0 = ddim_sample(denoise, gaussian<T>(Shape{1, b, latent[0], latent[1], latent[2]}, rng), schedule,
                        plan.steps, plan.eta, rng);
  std::vector<Tensor<T>> out;
  for (std::size_t j = 0; j < b; ++j) out.push_back(reshape(slice(z0, 1, j, j + 1), latent));
  return out;
}

template class ContextWindow<float>;
template class ContextWindow<double>;
template class AutoregressiveEngine<float>;
template class AutoregressiveEngine<double>;
template std::vector<Tensor<float>> sample_unconditional(const UNet<float>&, const NoiseSchedule&,
                                                         const GenerationPlan&, Rng&);
template std::vector<Tensor<double>> sample_unconditional(const UNet<double>&, const NoiseSchedule&,
                                                          const GenerationPlan&, Rng&);

}  // namespace mis
