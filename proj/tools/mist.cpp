#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mis/checkpoint.hpp"
#include "mis/commands.hpp"
#include "mis/io.hpp"
#include "mis/train.hpp"

namespace fs = std::filesystem;
using namespace mis;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mist");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("MIST_LOG");
  const std::string l = level ? level : "info";
  if (l == "debug") spdlog::set_level(spdlog::level::debug);
  else if (l == "error") spdlog::set_level(spdlog::level::err);
  else spdlog::set_level(spdlog::level::info);
}

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

/// Config layering for one subcommand: defaults, then --config, then flags
/// in the order given.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;

  void attach(CLI::App* sub, const std::vector<std::pair<std::string, std::string>>& aliases = {}) {
    sub->add_option("--config", file, "flat key = value config file");
    sub->add_option("--set", sets, "key=value override (repeatable)");
    auto bind = [&](const std::string& flag, const std::string& key) {
      sub->add_option_function<std::string>(
          flag, [this, key](const std::string& v) { flags.emplace_back(key, v); }, "sets " + key);
    };
    for (const auto& [flag, key] : aliases) bind(flag, key);
    for (const auto& key : RunConfig::keys()) {
      const auto flag = dashed(key);
      bool taken = false;
      for (const auto& a : aliases) taken = taken || a.first == flag;
      if (!taken) bind(flag, key);
    }
  }

  RunConfig resolve(RunConfig base = {}) const {
    if (!file.empty()) {
      const auto bytes = read_bytes(file);
      base.apply(std::string(bytes.begin(), bytes.end()));
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      base.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) base.set(k, v);
    return base;
  }
};

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Many-to-many autoregressive image-set diffusion toolkit"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> common{{"--out", "output"}, {"--per-iter", "block_size"}};

  ConfigFlags build_flags, train_flags, sample_flags, eval_flags, bench_flags;
  auto* build = app.add_subcommand("build-dataset", "render a procedural image-set corpus");
  build_flags.attach(build, {{"--out", "corpus"}, {"--per-iter", "block_size"}});

  auto* train = app.add_subcommand("train", "train a denoiser on a corpus");
  auto train_aliases = common;
  train_aliases.emplace_back("--steps", "train_steps");
  train_flags.attach(train, train_aliases);
  std::string resume;
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* sample = app.add_subcommand("sample", "generate an image sequence from a checkpoint");
  auto sample_aliases = common;
  sample_aliases.emplace_back("--steps", "sampler_steps");
  sample_flags.attach(sample, sample_aliases);
  std::string checkpoint;
  std::vector<std::string> seed_images;
  sample->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  sample->add_option("--seed-images", seed_images, "context images fed before generation");

  auto* eval = app.add_subcommand("eval", "feature consistency of generated images against a context set");
  eval_flags.attach(eval, common);
  std::string generated, context;
  eval->add_option("--generated", generated, "directory of generated images")->required();
  eval->add_option("--context", context, "directory of context images")->required();

  auto* bench = app.add_subcommand("bench-attn", "time and count global vs set-axis cross-attention");
  bench_flags.attach(bench, common);
  std::size_t repeats = 20;
  bench->add_option("--repeats", repeats, "timed runs per grid (median reported)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*build) return cmd_build_dataset(build_flags.resolve());
    if (*train) {
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      return cmd_train(train_flags.resolve(), from);
    }
    if (*sample) {
      // Start from the configuration the checkpoint was trained with.
      const auto cfg = sample_flags.resolve(RunConfig::parse(read_checkpoint_config(checkpoint)));
      std::vector<fs::path> seeds(seed_images.begin(), seed_images.end());
      return cmd_sample(cfg, checkpoint, seeds);
    }
    if (*eval) return cmd_eval(eval_flags.resolve(), generated, context);
    if (*bench) return cmd_bench_attn(bench_flags.resolve(), repeats);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    std::cerr << app.help() << "\n";
    return kExitConfig;
  } catch (const NonFiniteLoss& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitNumeric;
  } catch (const FormatError& e) {
    spdlog::error("format error: {}", e.what());
    return kExitFormat;
  } catch (const IoError& e) {
    spdlog::error("i/o error: {}", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("i/o error: {}", e.what());
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return kExitOk;
}
