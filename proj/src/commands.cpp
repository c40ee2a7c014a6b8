#include "mis/commands.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "mis/bench.hpp"
#include "mis/checkpoint.hpp"
#include "mis/io.hpp"
#include "mis/metrics.hpp"

namespace mis {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void echo_config(const RunConfig& cfg, const fs::path& dir) { write_text(dir / "config.txt", cfg.to_text()); }

std::shared_ptr<const FeatureEncoder> make_encoder(const RunConfig& cfg) {
  return std::make_shared<PatchStatEncoder>(cfg.feature_grid, cfg.feature_dim);
}

/// Default task payload for generation: ring cameras or step indices for
/// every sequence position.
TaskCondition sequence_task(TaskKind kind, std::size_t count) {
  TaskCondition t;
  t.kind = kind;
  if (kind == TaskKind::Camera) t.poses = ring_poses(count);
  if (kind == TaskKind::Position)
    for (std::size_t i = 0; i < count; ++i) t.steps.push_back(i);
  return t;
}

/// Loss rows of an earlier run that precede `first_step`.
std::string kept_loss_rows(const fs::path& csv, std::uint64_t first_step) {
  std::ifstream in(csv);
  std::string line, out;
  if (!in) return out;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stoull(line.substr(0, comma)) < first_step) out += line + "\n";
  }
  return out;
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_build_dataset(const RunConfig& cfg) {
  if (cfg.resolution == 0) throw ConfigError("resolution must be positive");
  if (cfg.n == 0) throw ConfigError("n must be positive");
  const fs::path dir = cfg.corpus;
  const auto m = build_corpus(cfg.corpus_options(), dir);
  echo_config(cfg, dir);
  spdlog::info("{} corpus: {} records, {} captions rejected", to_string(m.kind), m.records.size(),
               m.captions_rejected);
  fmt::print("{} records\n{}\n", m.records.size(), (dir / kManifestFile).string());
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  cfg.validate();
  const fs::path corpus = cfg.corpus, out = cfg.output;
  const auto manifest = load_manifest(corpus / kManifestFile);
  if (manifest.resolution != cfg.resolution)
    throw ConfigError(fmt::format("corpus resolution {} does not match config resolution {}", manifest.resolution,
                                  cfg.resolution));

  UNet<float> model(cfg.unet());
  const auto encoder = make_encoder(cfg);
  auto data = load_training_data<float>(manifest, corpus, model.config(), encoder.get(), cfg.patch);
  if (resume) {
    load_checkpoint(*resume, model.parameters());
    spdlog::info("resumed from {} at step {}", resume->string(), model.parameters().step());
  }
  Trainer<float> trainer(model, cfg.schedule(), std::move(data), cfg.train_options());
  spdlog::info("training {} ({} parameters) on {} sets for {} steps", to_string(cfg.variant),
               model.parameter_count(), manifest.records.size(), cfg.train_steps);

  fs::create_directories(out);
  echo_config(cfg, out);
  const std::string blob = cfg.to_text();
  std::string rows = resume ? kept_loss_rows(out / "loss.csv", trainer.next_step()) : std::string();
  std::ofstream csv(out / "loss.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out / "loss.csv").string());
  csv << "step,loss,dropout_flag\n" << rows;

  while (trainer.next_step() < cfg.train_steps) {
    StepRecord r;
    try {
      r = trainer.step();
    } catch (const NonFiniteLoss&) {
      csv.flush();
      throw;
    }
    csv << fmt::format("{},{:.9g},{}\n", r.step, r.loss, r.dropped ? 1 : 0);
    const auto done = r.step + 1;
    if (done % 50 == 0) spdlog::info("step {} loss {:.5f}", done, r.loss);
    spdlog::debug("step {} loss {:.9g} dropped {}", r.step, r.loss, r.dropped);
    if (cfg.checkpoint_every && done % cfg.checkpoint_every == 0) {
      csv.flush();
      save_checkpoint(out / fmt::format("ckpt-{:06d}.misc", done), model.parameters(), blob);
    }
  }
  csv.close();
  if (!csv) throw IoError("write failed for " + (out / "loss.csv").string());
  save_checkpoint(out / "model.misc", model.parameters(), blob);
  fmt::print("{}\n", (out / "model.misc").string());
  return kExitOk;
}

int cmd_sample(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<fs::path>& seed_images) {
  cfg.validate();
  if (seed_images.size() > cfg.window)
    throw ConfigError(fmt::format("{} seed images exceed the context window of {}", seed_images.size(), cfg.window));
  UNet<float> model(cfg.unet());
  load_checkpoint(checkpoint, model.parameters());

  std::vector<Tensor<float>> seeds;
  for (const auto& p : seed_images) {
    const auto img = read_image(p);
    if (img.width != cfg.resolution || img.height != cfg.resolution)
      throw ConfigError(fmt::format("seed image {} is {}x{}, model expects {}x{}", p.string(), img.width, img.height,
                                    cfg.resolution, cfg.resolution));
    seeds.push_back(ae_encode(img, cfg.patch));
  }

  auto plan = cfg.plan();
  plan.task = sequence_task(cfg.task, seeds.size() + cfg.total);
  AutoregressiveEngine<float> engine(model, cfg.schedule(), make_encoder(cfg), cfg.patch);
  engine.set_observer([](const IterationInfo& info) {
    spdlog::info("iteration {}: images {}.. from {} context image(s)", info.iteration, info.first_index,
                 info.context_indices.size());
  });
  const auto latents = engine.run(seeds, plan);

  const fs::path out = cfg.output;
  fs::create_directories(out);
  echo_config(cfg, out);
  json files = json::array();
  for (std::size_t k = 0; k < latents.size(); ++k) {
    const auto name = fmt::format("{:03d}.png", k);
    write_png(out / name, ae_decode(latents[k], cfg.patch));
    files.push_back(name);
  }
  json seeds_json = json::array();
  for (const auto& p : seed_images) seeds_json.push_back(p.string());
  json meta{{"seed", cfg.seed},
            {"config_hash", cfg.hash()},
            {"checkpoint", checkpoint.string()},
            {"variant", std::string(to_string(cfg.variant))},
            {"total", cfg.total},
            {"per_iteration", plan.per_iteration},
            {"iterations", engine.iterations()},
            {"window", cfg.window},
            {"guidance", cfg.guidance},
            {"task_guidance", cfg.task_guidance ? json(*cfg.task_guidance) : json(nullptr)},
            {"sampler_steps", cfg.sampler_steps},
            {"eta", cfg.eta},
            {"seed_images", seeds_json},
            {"files", files}};
  write_text(out / "sample.json", meta.dump(2) + "\n");
  fmt::print("{} images, {} iterations\n", latents.size(), engine.iterations());
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& generated, const fs::path& context) {
  const auto gen_paths = list_images(generated);
  const auto ctx_paths = list_images(context);
  if (gen_paths.empty()) throw ConfigError("no generated images in " + generated.string());
  if (ctx_paths.empty()) throw ConfigError("no context images in " + context.string());
  std::vector<Image> gen, ctx;
  for (const auto& p : gen_paths) gen.push_back(read_image(p));
  for (const auto& p : ctx_paths) ctx.push_back(read_image(p));
  const auto encoder = make_encoder(cfg);
  EvalReport r;
  try {
    r = evaluate(gen, ctx, *encoder);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  json per = json::array();
  for (std::size_t i = 0; i < gen_paths.size(); ++i)
    per.push_back({{"file", gen_paths[i].filename().string()}, {"consistency", r.per_image[i]}});
  json report{{"feature_consistency_mean", r.feature_consistency_mean},
              {"feature_consistency_std", r.feature_consistency_std},
              {"within_set_variance", r.within_set_variance},
              {"encoder", encoder->id()},
              {"per_image", per}};
  const fs::path out = cfg.output;
  fs::create_directories(out);
  echo_config(cfg, out);
  write_text(out / "metrics.json", report.dump(2) + "\n");
  fmt::print("{}\n", report.dump(2));
  return kExitOk;
}

int cmd_bench_attn(const RunConfig& cfg, std::size_t repeats) {
  if (repeats == 0) throw ConfigError("repeats must be positive");
  Rng rng = make_rng(cfg.seed, 0);
  std::string csv = bench_csv_header();
  bool ok = true;
  for (const auto& g : default_bench_grids(repeats)) {
    const auto row = bench_attention(g, rng);
    if (!row.counts_match()) {
      spdlog::error("key visits differ from the analytic count at n={} block={} h={} w={}", g.n, g.block, g.height,
                    g.width);
      ok = false;
    }
    csv += bench_csv_row(row);
  }
  const fs::path out = cfg.output;
  fs::create_directories(out);
  echo_config(cfg, out);
  write_text(out / "bench.csv", csv);
  fmt::print("{}", csv);
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace mis
