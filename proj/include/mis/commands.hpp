#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mis/config.hpp"

namespace mis {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitFormat = 5,
};

/// Writes the corpus to cfg.corpus.
int cmd_build_dataset(const RunConfig& cfg);

/// Trains on cfg.corpus into cfg.output, optionally continuing from a
/// checkpoint. Writes loss.csv, ckpt-<step>.misc every checkpoint_every
/// steps and model.misc at the end.
int cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume);

/// Generates cfg.total images from a checkpoint into cfg.output as
/// <k>.png plus sample.json.
int cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint,
               const std::vector<std::filesystem::path>& seed_images);

/// Feature consistency of the generated directory against the context
/// directory; writes metrics.json into cfg.output and prints it.
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& generated, const std::filesystem::path& context);

/// Writes bench.csv into cfg.output and prints it.
int cmd_bench_attn(const RunConfig& cfg, std::size_t repeats);

/// Images (.png, .ppm) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace mis
