#include "mis/train.hpp"

#include <cmath>
#include <random>

#include "mis/ops.hpp"

namespace mis {

template <typename T>
std::vector<TrainingExample<T>> load_training_data(const Manifest& manifest, const std::filesystem::path& corpus_dir,
                                                   const UNetConfig& model, const FeatureEncoder* encoder,
                                                   std::size_t patch) {
  const bool dino = model.variant == Variant::MisDino;
  if (dino && !encoder) throw std::invalid_argument("MisDino training needs a feature encoder");
  std::vector<TrainingExample<T>> out;
  for (const auto& rec : manifest.records) {
    const auto images = load_record_images(rec, corpus_dir);
    TrainingExample<T> ex;
    ex.latents = ae_encode_set<T>(images, patch);
    if (ex.latents.dim(1) != model.latent_channels || ex.latents.dim(2) != model.latent_height ||
        ex.latents.dim(3) != model.latent_width)
      throw DimensionError("record " + rec.id + " encodes to " + to_string(ex.latents.shape()) +
                           ", model expects [N, " + std::to_string(model.latent_channels) + ", " +
                           std::to_string(model.latent_height) + ", " + std::to_string(model.latent_width) + "]");
    if (dino) ex.features = encode_set(*encoder, images).features.template cast<T>();
    const auto task = record_task(rec);
    if (model.task != TaskKind::None && task.kind == model.task) ex.task = task;
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
Trainer<T>::Trainer(UNet<T>& model, NoiseSchedule schedule, std::vector<TrainingExample<T>> data,
                    TrainOptions options)
    : model_(model), schedule_(std::move(schedule)), data_(std::move(data)), options_(options) {
  if (data_.empty()) throw std::invalid_argument("training needs at least one image set");
  if (options_.batch_sets == 0) throw std::invalid_argument("batch_sets must be positive");
  if (options_.dropout < 0.0 || options_.dropout > 1.0) throw std::invalid_argument("dropout must be in [0, 1]");
  std::size_t shortest = data_.front().latents.dim(0);
  for (const auto& ex : data_) shortest = std::min(shortest, ex.latents.dim(0));
  set_size_ = options_.set_size ? options_.set_size : shortest;
  if (set_size_ > shortest)
    throw std::invalid_argument("set_size " + std::to_string(set_size_) + " exceeds the shortest record (" +
                                std::to_string(shortest) + " images)");
  const std::size_t b = model_.config().block_size_for_variant();
  if (set_size_ % b != 0)
    throw std::invalid_argument("training sets of " + std::to_string(set_size_) + " images do not split into blocks of " +
                                std::to_string(b));
}

template <typename T>
StepRecord Trainer<T>::step() {
  const std::uint64_t k = next_step();
  Rng rng = make_rng(options_.seed, k);
  const bool dino = model_.config().variant == Variant::MisDino;
  const std::size_t n = set_size_;

  std::vector<Tensor<T>> z_parts, c_parts;
  std::vector<TaskCondition> tasks;
  std::vector<std::size_t> t;
  bool any_task = false;
  for (std::size_t b = 0; b < options_.batch_sets; ++b) {
    const auto& ex = data_[std::uniform_int_distribution<std::size_t>(0, data_.size() - 1)(rng)];
    const std::size_t len = ex.latents.dim(0);
    const std::size_t off = std::uniform_int_distribution<std::size_t>(0, len - n)(rng);
    auto z = slice(ex.latents, 0, off, off + n);
    Shape zs{1};
    zs.insert(zs.end(), z.shape().begin(), z.shape().end());
    z_parts.push_back(reshape(z, zs));
    if (dino) {
      auto f = slice(ex.features, 0, off, off + n);
      c_parts.push_back(reshape(f, {1, n, f.dim(1), f.dim(2)}));
    }
    TaskCondition tc;
    if (ex.task.kind != TaskKind::None) {
      any_task = true;
      tc.kind = ex.task.kind;
      if (tc.kind == TaskKind::Camera)
        tc.poses.assign(ex.task.poses.begin() + off, ex.task.poses.begin() + off + n);
      else
        tc.steps.assign(ex.task.steps.begin() + off, ex.task.steps.begin() + off + n);
    }
    tasks.push_back(std::move(tc));
    t.push_back(std::uniform_int_distribution<std::size_t>(0, schedule_.steps() - 1)(rng));
  }
  const auto z0 = concat(std::span<const Tensor<T>>(z_parts), 0);
  const auto cond = dino ? concat(std::span<const Tensor<T>>(c_parts), 0) : z0;
  const auto eps = gaussian<T>(z0.shape(), rng);
  const double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

  auto result = training_loss(model_, z0, cond, t, eps, draw, schedule_, options_.dropout,
                              any_task ? std::span<const TaskCondition>(tasks) : std::span<const TaskCondition>{});
  const double loss = static_cast<double>(result.loss.item());
  if (!std::isfinite(loss))
    throw NonFiniteLoss("training loss became " + std::to_string(loss) + " at step " + std::to_string(k));

  auto grads = backward(result.loss);
  // Parameters off the graph this step (e.g. task embedders on a dropped
  // step) get a zero gradient so their Adam moments still decay.
  for (const auto& [name, p] : std::as_const(model_.parameters()).params())
    if (!grads.contains(p)) grads.set(p.node(), Tensor<T>::zeros(p.shape()));
  adam_step(model_.parameters(), grads, options_.adam);
  return {k, loss, result.dropped};
}

template std::vector<TrainingExample<float>> load_training_data(const Manifest&, const std::filesystem::path&,
                                                                const UNetConfig&, const FeatureEncoder*,
                                                                std::size_t);
template std::vector<TrainingExample<double>> load_training_data(const Manifest&, const std::filesystem::path&,
                                                                 const UNetConfig&, const FeatureEncoder*,
                                                                 std::size_t);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace mis
