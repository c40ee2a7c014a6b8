#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mis/dataset.hpp"
#include "mis/diffusion.hpp"
#include "mis/engine.hpp"
#include "mis/train.hpp"
#include "mis/unet.hpp"

namespace mis {

/// Invalid configuration or usage; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of every command. Text form is flat `key = value` lines with
/// `#` comments; keys are the member names.
struct RunConfig {
  Variant variant = Variant::MisSa;
  std::string corpus = "corpus";
  std::string output = "out";
  std::uint64_t seed = 0;

  // model
  std::size_t resolution = 32;
  std::size_t patch = kDefaultPatch;
  std::size_t base_channels = 32;
  std::vector<std::size_t> channel_mult{1, 2};
  std::size_t time_dim = 64;
  std::size_t groups = 8;
  std::size_t heads = 4;
  std::size_t tau = 4;
  std::size_t block_size = 1;
  std::size_t feature_grid = 4;
  std::size_t feature_dim = 32;
  TaskKind task = TaskKind::None;
  std::size_t task_dim = 64;
  std::size_t position_input_dim = 32;
  bool attention = true;
  std::uint64_t model_seed = 0;

  // schedule
  std::size_t diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  // training
  std::size_t train_steps = 500;
  double lr = 1e-3;
  double dropout = kDefaultDropout;
  std::size_t batch_sets = 1;
  std::size_t set_size = 0;
  std::size_t checkpoint_every = 100;

  // sampling
  std::size_t sampler_steps = kDefaultSamplerSteps;
  double guidance = kDefaultGuidance;
  std::optional<double> task_guidance;
  std::size_t window = 4;
  std::size_t total = 4;
  double eta = 0.0;

  // dataset
  CorpusKind kind = CorpusKind::Mis;
  std::size_t sets = 10;
  std::size_t n = 5;
  std::size_t max_tokens = kMaxCaptionTokens;

  /// Throws ConfigError for an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Applies `key = value` lines on top of the current values.
  void apply(const std::string& text);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// All keys in declaration order; parse(to_text()) reproduces the config.
  std::string to_text() const;
  /// FNV-1a of to_text(), hex.
  std::string hash() const;

  UNetConfig unet() const;
  NoiseSchedule schedule() const;
  TrainOptions train_options() const;
  GenerationPlan plan() const;
  CorpusOptions corpus_options() const;

  /// Checks everything the commands rely on; throws ConfigError.
  void validate() const;
};

}  // namespace mis
