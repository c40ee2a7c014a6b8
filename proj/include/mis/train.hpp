#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mis/dataset.hpp"
#include "mis/diffusion.hpp"
#include "mis/unet.hpp"

namespace mis {

/// Raised when a training loss stops being finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct TrainingExample {
  Tensor<T> latents;   // [N, C, H, W]
  Tensor<T> features;  // [N, S, D]; MisDino only
  TaskCondition task;  // N entries or kind None
};

/// Encodes every record of a corpus for the given model. Task payloads are
/// attached only when the model has a task of the same kind.
template <typename T>
std::vector<TrainingExample<T>> load_training_data(const Manifest& manifest, const std::filesystem::path& corpus_dir,
                                                   const UNetConfig& model, const FeatureEncoder* encoder,
                                                   std::size_t patch = kDefaultPatch);

struct TrainOptions {
  AdamConfig adam;
  double dropout = kDefaultDropout;
  std::size_t batch_sets = 1;
  /// Images per training set; 0 uses whole records. Shorter windows start
  /// at a random offset within the record.
  std::size_t set_size = 0;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  bool dropped = false;
};

/// Adam on the diffusion loss. All randomness of step k comes from
/// make_rng(seed, k), so a run resumed from a checkpoint at step k repeats
/// the uninterrupted run exactly.
template <typename T>
class Trainer {
 public:
  Trainer(UNet<T>& model, NoiseSchedule schedule, std::vector<TrainingExample<T>> data, TrainOptions options);

  /// Index of the next step, taken from the parameter store.
  std::uint64_t next_step() const { return model_.parameters().step(); }
  StepRecord step();

  const TrainOptions& options() const { return options_; }

 private:
  UNet<T>& model_;
  NoiseSchedule schedule_;
  std::vector<TrainingExample<T>> data_;
  TrainOptions options_;
  std::size_t set_size_;
};

}  // namespace mis
