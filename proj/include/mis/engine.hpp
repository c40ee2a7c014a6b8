#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mis/conditioning.hpp"
#include "mis/diffusion.hpp"
#include "mis/unet.hpp"

namespace mis {

/// One clean-image context: a latent [C, H, W] for MisSa or features [S, D]
/// for MisDino, tagged with its position in the generated sequence.
template <typename T>
struct ContextEntry {
  Tensor<T> value;
  std::size_t index = 0;
};

/// Bounded FIFO of contexts, oldest first.
template <typename T>
class ContextWindow {
 public:
  explicit ContextWindow(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<ContextEntry<T>>& entries() const { return entries_; }

  /// Evicts the oldest entry when full. A zero-capacity window stays empty.
  void push(Tensor<T> value, std::size_t index);
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<ContextEntry<T>> entries_;
};

/// Plain guidance uses `scale`; setting task_scale switches to the dual form
/// with s_I = scale and s_C = task_scale.
struct GuidanceConfig {
  double scale = kDefaultGuidance;
  std::optional<double> task_scale;
};

struct GenerationPlan {
  Variant variant = Variant::MisSa;
  std::size_t total = 0;
  std::size_t per_iteration = 1;  // B for MisSa, always 1 for MisDino
  std::size_t window = 4;
  GuidanceConfig guidance;
  std::size_t steps = kDefaultSamplerSteps;
  double eta = 0.0;
  std::uint64_t seed = 0;
  /// Per-position task payload covering seeds followed by generated images,
  /// or kind None.
  TaskCondition task;

  /// Throws std::invalid_argument when the plan cannot drive this model.
  void validate(const UNetConfig& model) const;
};

struct IterationInfo {
  std::size_t iteration = 0;
  std::size_t first_index = 0;            // sequence position of the first new image
  std::vector<std::size_t> context_indices;  // positions fed as context, oldest first
  std::size_t model_images = 0;           // images per model invocation, including padding
};

template <typename T>
class AutoregressiveEngine {
 public:
  using Observer = std::function<void(const IterationInfo&)>;

  /// MisDino needs a feature encoder; when none is given a PatchStatEncoder
  /// matching the model's feature shape is used.
  AutoregressiveEngine(const UNet<T>& model, NoiseSchedule schedule,
                       std::shared_ptr<const FeatureEncoder> encoder = nullptr, std::size_t patch = 4);

  /// Runs one full guided DDIM loop and returns per_iteration latents
  /// [C, H, W]. first_index is the sequence position of the first output.
  std::vector<Tensor<T>> generate_next(const ContextWindow<T>& ctx, const GenerationPlan& plan,
                                       std::size_t first_index, Rng& rng);

  /// Generates plan.total images after the seed latents. Iteration k draws
  /// from make_rng(plan.seed, k), so prefixes of longer runs agree.
  std::vector<Tensor<T>> run(std::span<const Tensor<T>> seed_latents, const GenerationPlan& plan);

  /// The form a latent takes inside the window for this model's variant.
  Tensor<T> context_value(const Tensor<T>& latent) const;

  void set_observer(Observer obs) { observer_ = std::move(obs); }
  std::size_t iterations() const { return iterations_; }
  std::size_t max_context_seen() const { return max_context_; }
  const FeatureEncoder* encoder() const { return encoder_.get(); }

 private:
  Tensor<T> predict(const Tensor<T>& noisy, const Tensor<T>& context, double t, const TaskCondition* task) const;

  const UNet<T>& model_;
  NoiseSchedule schedule_;
  std::shared_ptr<const FeatureEncoder> encoder_;
  std::size_t patch_;
  Observer observer_;
  std::size_t iterations_ = 0;
  std::size_t max_context_ = 0;
};

/// Reference unconditional sampler: DDIM with a zero context and no task,
/// independent of the window machinery. Returns per_iteration latents.
template <typename T>
std::vector<Tensor<T>> sample_unconditional(const UNet<T>& model, const NoiseSchedule& schedule,
                                            const GenerationPlan& plan, Rng& rng);

}  // namespace mis
