// Runs every acceptance criterion and prints one [PASS]/[FAIL] line each.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mis/attention.hpp"
#include "mis/bench.hpp"
#include "mis/checkpoint.hpp"
#include "mis/config.hpp"
#include "mis/dataset.hpp"
#include "mis/diffusion.hpp"
#include "mis/engine.hpp"
#include "mis/io.hpp"
#include "mis/ops.hpp"
#include "mis/train.hpp"
#include "test_support.hpp"

using namespace mis;
using mis::testing::gradcheck;
using mis::testing::probe_weights;
using mis::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mis_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

UNetConfig tiny(Variant v, std::size_t block = 1, TaskKind task = TaskKind::None) {
  UNetConfig c;
  c.variant = v;
  c.latent_channels = 3;
  c.latent_height = 4;
  c.latent_width = 4;
  c.base_channels = 8;
  c.time_dim = 8;
  c.groups = 2;
  c.heads = 2;
  c.tau = 2;
  c.block_size = block;
  c.feature_tokens = 4;
  c.feature_dim = 4;
  c.task = task;
  c.task_dim = 8;
  c.position_input_dim = 8;
  c.seed = 41;
  return c;
}

template <typename T>
Tensor<T> context_for(const UNetConfig& c, std::size_t n, Rng& rng, bool grad = false) {
  if (c.variant == Variant::MisSa)
    return random_tensor<T>({1, n, c.latent_channels, c.latent_height, c.latent_width}, rng, 1.0, grad);
  return random_tensor<T>({1, n, c.feature_tokens, c.feature_dim}, rng, 1.0, grad);
}

const std::vector<std::pair<Variant, std::size_t>> kLayouts{
    {Variant::MisSa, 1}, {Variant::MisSa, 2}, {Variant::MisDino, 1}};

// --- 1 ---------------------------------------------------------------------

struct Patch {
  std::size_t image, y, x;
};

Patch decode(std::size_t index, std::size_t h, std::size_t w) { return {index / (h * w), (index / w) % h, index % w}; }

Outcome masks_match_enumeration() {
  Outcome o;
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t b = 1; b <= n; ++b) {
      if (n % b) continue;
      BlockLayout layout(n, b);
      for (std::size_t h = 1; h <= 3; ++h)
        for (std::size_t w = 1; w <= 3; ++w) {
          const auto g = build_global_causal_mask(layout, h, w);
          const auto s = build_block_self_mask(layout, h, w);
          const std::size_t l = n * h * w;
          for (std::size_t q = 0; q < l; ++q)
            for (std::size_t k = 0; k < l; ++k) {
              const auto bq = decode(q, h, w).image / b, bk = decode(k, h, w).image / b;
              o.require(g.allowed(q, k) == (bk < bq), fmt::format("global n={} b={} h={} w={}", n, b, h, w));
              o.require(s.allowed(q, k) == (bk == bq), fmt::format("self n={} b={} h={} w={}", n, b, h, w));
              ++checked;
            }
        }
      const auto a = build_set_axis_causal_mask(layout);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) o.require(a.allowed(i, j) == (j / b < i / b), "set axis");
    }
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t s = 1; s <= 4; ++s) {
      const auto e = build_external_causal_mask(n, s);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n * s; ++k) o.require(e.allowed(i, k) == (k / s < i), "external");
    }
  o.detail = o.ok ? fmt::format("{} cells", checked) : o.detail;
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome unet_causality() {
  Outcome o;
  for (auto [v, block] : kLayouts) {
    UNet<float> net(tiny(v, block));
    o.require(net.attention_kinds().size() >= 2, "fewer than two attention layers");
    const std::size_t n = 4;
    Rng rng(3);
    const auto& c = net.config();
    auto noisy = random_tensor<float>({1, n, c.latent_channels, c.latent_height, c.latent_width}, rng);
    auto ctx = context_for<float>(c, n, rng);
    const std::vector<double> t{30};
    const auto base = net.forward(noisy, ctx, t);
    BlockLayout layout(n, c.block_size_for_variant());
    const std::size_t per = ctx.numel() / n;
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<float> d(ctx.data().begin(), ctx.data().end());
      for (std::size_t e = j * per; e < (j + 1) * per; ++e) d[e] += 0.5f;
      const auto pert = net.forward(noisy, Tensor<float>(ctx.shape(), d), t);
      for (std::size_t i = 0; i < n; ++i) {
        const bool moved = max_abs_diff(slice(base, 1, i, i + 1), slice(pert, 1, i, i + 1)) > 0;
        o.require(moved == (layout.block_of(i) > layout.block_of(j)),
                  fmt::format("{} B={} image {} vs context {}", to_string(v), block, i, j));
      }
    }
  }
  if (o.ok) o.detail = "SA B=1, SA B=2, Dino";
  return o;
}

// --- 3 ---------------------------------------------------------------------

Outcome set_axis_reduces_to_global() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(1, 4);
    const std::size_t b = pick(rng), k = pick(rng), n = b * k;
    BlockLayout layout(n, b);
    ParameterStore<double> store;
    auto params = MultiHeadParams<double>::create(store, "x", 8, 2, seed);
    auto zn = random_tensor<double>({2, n, 1, 1, 8}, rng);
    auto zc = random_tensor<double>({2, n, 1, 1, 8}, rng);
    worst = std::max(worst, max_abs_diff(global_cross_attention(zn, zc, layout, params),
                                         block_set_cross_attention(zn, zc, layout, params)));
  }
  o.require(worst <= 1e-6, fmt::format("max diff {:.3g}", worst));
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t s = 1; s <= 4; ++s) {
      const auto ext = build_external_causal_mask(n, s);
      const auto ref = build_global_causal_mask(BlockLayout(n, 1), 1, 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t key = 0; key < n * s; ++key)
          o.require(ext.allowed(i, key) == ref.allowed(i, key / s), "external mask differs from global B=1");
    }
  if (o.ok) o.detail = fmt::format("max diff {:.3g}", worst);
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  double worst = 0;
  auto record = [&](double e, const std::string& what) {
    worst = std::max(worst, e);
    o.require(e <= 1e-4, fmt::format("{} rel err {:.3g}", what, e));
  };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ParameterStore<double> store;
    auto params = MultiHeadParams<double>::create(store, "p", 4, 2, seed);
    auto zn = random_tensor<double>({1, 4, 2, 1, 4}, rng, 1.0, true);
    auto zc = random_tensor<double>({1, 4, 2, 1, 4}, rng, 1.0, true);
    auto pw = probe_weights({1, 4, 2, 1, 4}, seed);
    BlockLayout layout(4, 2);
    std::vector<Tensor<double>> in{zn, zc, params.wq, params.wk, params.wv, params.wo};
    record(gradcheck([&] { return sum(mul(global_cross_attention(zn, zc, layout, params), pw)); }, in).max_rel_error,
           "global");
    record(gradcheck([&] { return sum(mul(block_set_cross_attention(zn, zc, layout, params), pw)); }, in)
               .max_rel_error,
           "block set");
    record(gradcheck([&] { return sum(mul(blockwise_self_attention(zn, layout, params), pw)); },
                     {zn, params.wq, params.wk, params.wv, params.wo})
               .max_rel_error,
           "self");
    auto feats = random_tensor<double>({1, 4, 3, 5}, rng, 1.0, true);
    auto& proj = store.add_uniform("p.proj", {5, 4}, 5, seed);
    record(gradcheck([&] { return sum(mul(external_cross_attention(zn, feats, params, proj), pw)); },
                     {zn, feats, proj, params.wq, params.wk, params.wv, params.wo})
               .max_rel_error,
           "external");

    auto cam = Mlp<double>::create(store, "cam", 12, 10, 6, seed);
    TaskCondition pose{TaskKind::Camera,
                       {CameraPose::look_at_origin(0.5 * seed, 0.1, 2.0), CameraPose::look_at_origin(seed, 0.4, 2.0)},
                       {},
                       false};
    auto pe = probe_weights({2, 6}, seed);
    record(gradcheck([&] { return sum(mul(embed_task(pose, cam), pe)); }, {cam.w1, cam.b1, cam.w2, cam.b2})
               .max_rel_error,
           "camera embedder");
    auto pos = Mlp<double>::create(store, "pos", 8, 10, 6, seed);
    TaskCondition steps{TaskKind::Position, {}, {seed, seed + 3}, false};
    record(gradcheck([&] { return sum(mul(embed_task(steps, pos), pe)); }, {pos.w1, pos.b1, pos.w2, pos.b2})
               .max_rel_error,
           "position embedder");

    for (auto v : {Variant::MisSa, Variant::MisDino}) {
      auto cfg = tiny(v, v == Variant::MisSa ? 2 : 1, TaskKind::Camera);
      cfg.feature_tokens = 2;
      cfg.seed = seed;
      UNet<double> net(cfg);
      auto noisy = random_tensor<double>({1, 2, 3, 4, 4}, rng, 1.0, true);
      auto ctx = context_for<double>(cfg, 2, rng, true);
      auto probe = probe_weights({1, 2, 3, 4, 4}, seed);
      const std::vector<double> t{double(seed * 7)};
      std::vector<Tensor<double>> inputs{noisy, ctx};
      for (const auto& [name, p] : net.parameters().params())
        if (name.rfind("enc0", 0) == 0 || name.rfind("attn", 0) == 0 || name.rfind("task_mlp", 0) == 0 ||
            name.rfind("conv_out", 0) == 0)
          inputs.push_back(p);
      record(gradcheck([&] { return sum(mul(net.forward(noisy, ctx, t, std::span(&pose, 1)), probe)); }, inputs,
                       1e-4, 8, seed)
                 .max_rel_error,
             fmt::format("{} U-Net", to_string(v)));
    }
  }
  if (o.ok) o.detail = fmt::format("max rel err {:.3g}", worst);
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome guidance() {
  Outcome o;
  Rng rng(3);
  auto u = random_tensor<float>({3, 4}, rng);
  auto c = random_tensor<float>({3, 4}, rng);
  auto k = random_tensor<float>({3, 4}, rng);
  o.require(max_abs_diff(cfg_combine(u, c, 1.0), c) <= 1e-6, "s = 1 is not the conditional prediction");
  o.require(max_abs_diff(dual_cfg_combine(u, c, k, 2.5, 0.0), cfg_combine(u, c, 2.5)) <= 1e-6,
            "dual at s_C = 0 differs from single guidance");
  o.require(max_abs_diff(dual_cfg_combine(u, c, k, 1.0, 1.0), k) <= 1e-6, "dual at unit scales is not eps_IC");
  const double v = dual_cfg_combine(Tensor<float>({1}, 0.f), Tensor<float>({1}, 2.f), Tensor<float>({1}, 5.f), 2.0,
                                    3.0)
                       .item();
  o.require(v == 13.0, fmt::format("worked example gives {}", v));
  if (o.ok) o.detail = "worked example 13";
  return o;
}

// --- 6 ---------------------------------------------------------------------

Outcome dropout_rate() {
  Outcome o;
  auto s = make_linear_schedule(100);
  NoisePredictor<double> zero = [](const Tensor<double>& z, const Tensor<double>&, std::span<const double>,
                                   std::span<const TaskCondition>) { return Tensor<double>::zeros(z.shape()); };
  Rng rng = make_rng(2024, 0);
  std::uniform_real_distribution<double> draw(0.0, 1.0);
  auto x = random_tensor<double>({1, 1, 2}, rng);
  const std::vector<std::size_t> t{40};
  std::size_t dropped = 0;
  for (int i = 0; i < 10000; ++i) dropped += training_loss(zero, x, x, t, x, draw(rng), s).dropped;
  const double rate = dropped / 10000.0;
  o.require(rate >= 0.08 && rate <= 0.12, fmt::format("rate {:.4f}", rate));
  if (o.ok) o.detail = fmt::format("rate {:.4f}", rate);
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome ddim() {
  Outcome o;
  auto s = make_linear_schedule(100);
  o.require(kDefaultSamplerSteps == 50 && kDefaultGuidance == 7.5, "defaults");
  RunConfig rc;
  o.require(rc.sampler_steps == 50 && rc.guidance == 7.5 && rc.eta == 0.0, "run config defaults");

  UNet<float> net(tiny(Variant::MisSa));
  Tensor<float> ctx = net.zero_context(1, 1);
  Denoiser<float> model = [&](const Tensor<float>& z, long t) {
    const double tv[1] = {double(t)};
    return net.forward(z, ctx, tv);
  };
  Rng init(5);
  auto z = gaussian<float>({1, 1, 3, 4, 4}, init);
  Rng ra(1), rb(1);
  o.require(bit_equal(ddim_sample(model, z, s, 50, 0.0, ra), ddim_sample(model, z, s, 50, 0.0, rb)),
            "eta = 0 replay differs");

  double worst = 0;
  Rng rng(4);
  for (long t : {1L, 30L, 60L, 99L}) {
    auto z0 = random_tensor<double>({1, 2, 16}, rng);
    auto eps = gaussian<double>({1, 2, 16}, rng);
    const std::vector<std::size_t> tv{static_cast<std::size_t>(t)};
    worst = std::max(worst, max_abs_diff(ddim_step(q_sample(z0, tv, eps, s), eps, t, -1, s), z0));
    auto zf = q_sample(z0.cast<float>(), tv, eps.cast<float>(), s);
    worst = std::max(worst, max_abs_diff(ddim_step(zf, eps.cast<float>(), t, -1, s).cast<double>(), z0));
  }
  o.require(worst < 1e-5, fmt::format("inversion error {:.3g}", worst));
  if (o.ok) o.detail = fmt::format("inversion error {:.3g}", worst);
  return o;
}

// --- 8 ---------------------------------------------------------------------

Outcome smoke_training(Variant v) {
  Outcome o;
  const auto dir = scratch(fmt::format("smoke_{}", to_string(v)));
  RunConfig cfg;
  cfg.variant = v;
  cfg.kind = CorpusKind::Procedure;
  cfg.sets = 10;
  cfg.n = 5;
  cfg.resolution = 32;
  cfg.block_size = 1;
  cfg.diffusion_steps = 100;
  cfg.train_steps = 500;
  cfg.corpus = dir.string();
  cfg.validate();
  const auto manifest = build_corpus(cfg.corpus_options(), dir);
  UNet<float> model(cfg.unet());
  PatchStatEncoder encoder(cfg.feature_grid, cfg.feature_dim);
  auto data = load_training_data<float>(manifest, dir, model.config(), &encoder, cfg.patch);
  Trainer<float> trainer(model, cfg.schedule(), std::move(data), cfg.train_options());
  std::vector<double> losses;
  for (std::size_t i = 0; i < cfg.train_steps; ++i) losses.push_back(trainer.step().loss);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += losses[i] / 50;
    last += losses[losses.size() - 50 + i] / 50;
  }
  o.require(last < first, fmt::format("first {:.4f} last {:.4f}", first, last));
  if (o.ok) o.detail = fmt::format("{} first-50 {:.4f} last-50 {:.4f}", to_string(v), first, last);
  fs::remove_all(dir);
  return o;
}

// --- 9 ---------------------------------------------------------------------

GenerationPlan plan_for(const UNetConfig& c, std::size_t total, std::size_t window) {
  GenerationPlan p;
  p.variant = c.variant;
  p.per_iteration = c.block_size_for_variant();
  p.total = total;
  p.window = window;
  p.steps = 2;
  p.seed = 99;
  return p;
}

Outcome window_and_eviction() {
  Outcome o;
  const auto schedule = make_linear_schedule(100);
  for (auto [v, block] : kLayouts) {
    const auto tag = fmt::format("{} B={}", to_string(v), block);
    UNet<float> net(tiny(v, block));
    AutoregressiveEngine<float> eng(net, schedule, nullptr, 1);
    auto plan = plan_for(net.config(), 20, 3);
    std::size_t expect = 0;
    eng.set_observer([&](const IterationInfo& info) {
      o.require(info.context_indices.size() <= 3, tag + " window exceeded");
      o.require(info.first_index == expect, tag + " iteration emitted the wrong number of images");
      expect += block;
    });
    const auto out = eng.run({}, plan);
    o.require(out.size() == 20 && eng.iterations() == 20 / block, tag + " iteration count");
    o.require(eng.max_context_seen() <= 3, tag + " window exceeded");
    o.require(v == Variant::MisSa ? plan.per_iteration == block : plan.per_iteration == 1, tag + " per iteration");

    if (block != 1) continue;
    AutoregressiveEngine<float> a(net, schedule, nullptr, 1);
    auto p2 = plan_for(net.config(), 5, 2);
    const auto full = a.run({}, p2);
    // Image 5 (index 4) from a window holding only images 3 and 4.
    ContextWindow<float> ctx(2);
    ctx.push(a.context_value(full[2]), 2);
    ctx.push(a.context_value(full[3]), 3);
    Rng rng = make_rng(p2.seed, 4);
    AutoregressiveEngine<float> b(net, schedule, nullptr, 1);
    o.require(bit_equal(b.generate_next(ctx, p2, 4, rng)[0], full[4]), tag + " image 5 depends on evicted image 1");
  }
  if (o.ok) o.detail = "W=3 over 20 images, W=2 eviction";
  return o;
}

// --- 10 --------------------------------------------------------------------

Outcome cost_model() {
  Outcome o;
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> pick(1, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = pick(rng), k = pick(rng), n = b * k, h = pick(rng), w = pick(rng);
    BlockLayout layout(n, b);
    auto params = MultiHeadParams<float>::identity(2, 1);
    auto zn = random_tensor<float>({1, n, h, w, 2}, rng);
    auto zc = random_tensor<float>({1, n, h, w, 2}, rng);
    AttentionStats g, s;
    global_cross_attention(zn, zc, layout, params, &g);
    block_set_cross_attention(zn, zc, layout, params, &s);
    const std::size_t pairs = b * b * k * (k - 1) / 2;
    o.require(g.key_visits == pairs * h * w * h * w, fmt::format("global count n={} b={} h={} w={}", n, b, h, w));
    o.require(s.key_visits == pairs * h * w, fmt::format("set count n={} b={} h={} w={}", n, b, h, w));
  }
  BenchGrid grid;
  grid.n = 4;
  grid.block = 1;
  grid.height = 16;
  grid.width = 16;
  grid.repeats = 20;
  Rng brng = make_rng(0, 0);
  const auto row = bench_attention(grid, brng);
  o.require(row.counts_match(), "bench counts");
  o.require(row.set_median_ms < row.global_median_ms,
            fmt::format("set {:.3f} ms vs global {:.3f} ms", row.set_median_ms, row.global_median_ms));
  if (o.ok)
    o.detail = fmt::format("16x16 N=4: set {:.3f} ms, global {:.3f} ms", row.set_median_ms, row.global_median_ms);
  return o;
}

// --- 11 --------------------------------------------------------------------

Outcome corpus() {
  Outcome o;
  for (auto kind : {CorpusKind::Mis, CorpusKind::Multiview, CorpusKind::Procedure}) {
    const auto d1 = scratch("corpus_a"), d2 = scratch("corpus_b");
    CorpusOptions opt;
    opt.kind = kind;
    opt.sets = 3;
    opt.seed = 11;
    const auto m1 = build_corpus(opt, d1);
    build_corpus(opt, d2);
    const auto tag = std::string(to_string(kind));
    o.require(read_bytes(d1 / kManifestFile) == read_bytes(d2 / kManifestFile), tag + " manifest differs");
    for (const auto& r : m1.records)
      for (const auto& f : r.files) o.require(read_bytes(d1 / f) == read_bytes(d2 / f), tag + " image differs");
    if (kind == CorpusKind::Multiview)
      for (const auto& r : load_manifest(d1 / kManifestFile).records) {
        o.require(r.files.size() == 12 && r.poses.size() == 12, "multiview record size");
        for (const auto& p : r.poses) o.require(is_rigid(p), "pose is not orthonormal");
      }
    fs::remove_all(d1);
    fs::remove_all(d2);
  }
  auto words = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += i ? " w" : "w";
    return s;
  };
  o.require(caption_filter(words(77)) && !caption_filter(words(78)), "caption boundary");
  if (o.ok) o.detail = "3 kinds rerun, 77 accepted, 78 rejected";
  return o;
}

// --- 12 --------------------------------------------------------------------

std::vector<TrainingExample<float>> toy_data(const UNetConfig& c, std::size_t sets, std::size_t n) {
  Rng rng(8);
  std::vector<TrainingExample<float>> out;
  for (std::size_t s = 0; s < sets; ++s) {
    TrainingExample<float> ex;
    ex.latents = random_tensor<float>({n, c.latent_channels, c.latent_height, c.latent_width}, rng);
    ex.features = random_tensor<float>({n, c.feature_tokens, c.feature_dim}, rng);
    ex.task.kind = TaskKind::Camera;
    for (std::size_t i = 0; i < n; ++i) ex.task.poses.push_back(CameraPose::look_at_origin(0.5 * i, 0.3, 3.0));
    out.push_back(std::move(ex));
  }
  return out;
}

bool same_parameters(const UNet<float>& a, const UNet<float>& b) {
  for (const auto& [name, p] : a.parameters().params())
    if (!bit_equal(p, b.parameters().get(name))) return false;
  for (const auto& [name, m] : a.parameters().moments()) {
    const auto& other = b.parameters().moments().at(name);
    if (m.first != other.first || m.second != other.second) return false;
  }
  return a.parameters().step() == b.parameters().step();
}

Outcome checkpoints() {
  Outcome o;
  const auto dir = scratch("ckpt");
  const auto schedule = make_linear_schedule(100);
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    const auto tag = std::string(to_string(v));
    auto cfg = tiny(v, 1, TaskKind::Camera);
    TrainOptions opt;
    opt.seed = 5;
    opt.set_size = 2;
    opt.dropout = 0.3;
    const auto data = toy_data(cfg, 3, 3);

    UNet<float> full(cfg);
    Trainer<float> a(full, schedule, data, opt);
    std::vector<StepRecord> reference;
    for (int i = 0; i < 10; ++i) reference.push_back(a.step());

    UNet<float> first(cfg);
    Trainer<float> b(first, schedule, data, opt);
    for (int i = 0; i < 5; ++i) b.step();
    save_checkpoint(dir / "mid.misc", first.parameters(), "variant = " + tag + "\n");

    auto other = cfg;
    other.seed = 999;
    UNet<float> resumed(other);
    load_checkpoint(dir / "mid.misc", resumed.parameters());
    o.require(same_parameters(first, resumed), tag + " round trip is not bit-exact");
    save_checkpoint(dir / "again.misc", resumed.parameters(), "variant = " + tag + "\n");
    o.require(read_bytes(dir / "mid.misc") == read_bytes(dir / "again.misc"), tag + " re-save differs");

    Trainer<float> c(resumed, schedule, data, opt);
    for (int i = 5; i < 10; ++i) {
      const auto r = c.step();
      o.require(r.step == reference[i].step && r.loss == reference[i].loss && r.dropped == reference[i].dropped,
                fmt::format("{} step {} differs after resume", tag, i));
    }
    o.require(same_parameters(full, resumed), tag + " final parameters differ");
  }
  fs::remove_all(dir);
  if (o.ok) o.detail = "5 + 5 steps match 10 uninterrupted";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0 means untimed
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "mask builders match brute-force enumeration", 10, masks_match_enumeration},
      {2, "end-to-end U-Net block causality", 30, unet_causality},
      {3, "set-axis attention reduces to global at H=W=1", 0, set_axis_reduces_to_global},
      {4, "finite-difference gradients", 0, gradients},
      {5, "classifier-free guidance algebra", 0, guidance},
      {6, "condition dropout rate", 0, dropout_rate},
      {7, "DDIM determinism, inversion and defaults", 0, ddim},
      {8,
       "500-step smoke training, both variants",
       600,
       [] {
         Outcome o;
         std::string detail;
         for (auto v : {Variant::MisSa, Variant::MisDino}) {
           const auto start = std::chrono::steady_clock::now();
           auto r = smoke_training(v);
           const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
           o.require(r.ok, r.detail);
           o.require(s < 600, fmt::format("{} took {:.1f} s", to_string(v), s));
           detail += (detail.empty() ? "" : "; ") + r.detail + fmt::format(" ({:.1f} s)", s);
         }
         if (o.ok) o.detail = detail;
         return o;
       }},
      {9, "context window bound and eviction", 0, window_and_eviction},
      {10, "key-visit counts and set-axis speed", 0, cost_model},
      {11, "corpus determinism, multiview poses, caption boundary", 0, corpus},
      {12, "checkpoint round trip and resume", 0, checkpoints},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0 && s >= c.limit_s) {
      o.ok = false;
      o.detail = fmt::format("took {:.1f} s, limit {:.0f} s", s, c.limit_s);
    }
    failed += o.ok ? 0 : 1;
    fmt::print("[{}] {:2d} {} ({:.2f} s) {}\n", o.ok ? "PASS" : "FAIL", c.id, c.name, s, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed;
}
