#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "mis/checkpoint.hpp"
#include "mis/io.hpp"
#include "mis/ops.hpp"
#include "mis/train.hpp"
#include "test_support.hpp"

using namespace mis;
using mis::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

UNetConfig tiny(Variant v, TaskKind task = TaskKind::None) {
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
  c.feature_tokens = 2;
  c.feature_dim = 4;
  c.task = task;
  c.task_dim = 8;
  c.seed = 31;
  return c;
}

template <typename T>
std::vector<TrainingExample<T>> toy_data(const UNetConfig& c, std::size_t sets, std::size_t n) {
  Rng rng(8);
  std::vector<TrainingExample<T>> out;
  for (std::size_t s = 0; s < sets; ++s) {
    TrainingExample<T> ex;
    ex.latents = random_tensor<T>({n, c.latent_channels, c.latent_height, c.latent_width}, rng);
    ex.features = random_tensor<T>({n, c.feature_tokens, c.feature_dim}, rng);
    if (c.task == TaskKind::Camera) {
      ex.task.kind = TaskKind::Camera;
      for (std::size_t i = 0; i < n; ++i) ex.task.poses.push_back(CameraPose::look_at_origin(0.5 * i, 0.3, 3.0));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mis_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename T>
bool same_parameters(const UNet<T>& a, const UNet<T>& b) {
  for (const auto& [name, p] : a.parameters().params())
    if (!bit_equal(p, b.parameters().get(name))) return false;
  return true;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
  auto dir = scratch("roundtrip");
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    CAPTURE(to_string(v));
    auto cfg = tiny(v, TaskKind::Camera);
    UNet<float> net(cfg);
    Trainer<float> tr(net, make_linear_schedule(100), toy_data<float>(cfg, 2, 3), {});
    for (int i = 0; i < 2; ++i) tr.step();
    save_checkpoint(dir / "a.ckpt", net.parameters(), "variant = x\n");

    auto other_cfg = cfg;
    other_cfg.seed = 1234;
    UNet<float> loaded(other_cfg);
    CHECK(load_checkpoint(dir / "a.ckpt", loaded.parameters()) == "variant = x\n");
    CHECK(read_checkpoint_config(dir / "a.ckpt") == "variant = x\n");
    CHECK(same_parameters(net, loaded));
    CHECK(loaded.parameters().step() == 2);
    for (const auto& [name, m] : net.parameters().moments()) {
      CHECK(m.first == loaded.parameters().moments().at(name).first);
      CHECK(m.second == loaded.parameters().moments().at(name).second);
    }

    Rng rng(2);
    auto z = random_tensor<float>({1, 3, 3, 4, 4}, rng);
    auto ctx = v == Variant::MisSa ? random_tensor<float>({1, 3, 3, 4, 4}, rng) : random_tensor<float>({1, 3, 2, 4}, rng);
    const double t[1] = {17};
    CHECK(bit_equal(net.forward(z, ctx, t), loaded.forward(z, ctx, t)));

    save_checkpoint(dir / "b.ckpt", loaded.parameters(), "variant = x\n");
    CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint rejection") {
  auto dir = scratch("reject");
  auto cfg = tiny(Variant::MisSa);
  UNet<float> net(cfg);
  save_checkpoint(dir / "good.ckpt", net.parameters(), "cfg");
  const auto good = read_bytes(dir / "good.ckpt");

  auto corrupt = [&](std::size_t at, std::uint8_t value) {
    auto b = good;
    b[at] = value;
    write_bytes(dir / "bad.ckpt", b);
    return dir / "bad.ckpt";
  };
  CHECK_THROWS_AS(load_checkpoint(corrupt(0, 'X'), net.parameters()), FormatError);
  CHECK_THROWS_AS(read_checkpoint_config(corrupt(4, 2)), FormatError);
  CHECK_THROWS_WITH_AS(load_checkpoint(corrupt(4, 2), net.parameters()), doctest::Contains("version 2"),
                       FormatError);
  CHECK_THROWS_WITH_AS(load_checkpoint(corrupt(good.size() / 2, good[good.size() / 2] ^ 1), net.parameters()),
                       doctest::Contains("checksum"), FormatError);
  write_bytes(dir / "short.ckpt", std::vector<std::uint8_t>(good.begin(), good.begin() + 10));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt", net.parameters()), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", net.parameters()), IoError);

  UNet<double> wide(cfg);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "good.ckpt", wide.parameters()), doctest::Contains("dtype"),
                       FormatError);
  auto bigger = cfg;
  bigger.base_channels = 16;
  bigger.groups = 4;
  UNet<float> other(bigger);
  CHECK_THROWS_AS(load_checkpoint(dir / "good.ckpt", other.parameters()), FormatError);
  auto with_task = cfg;
  with_task.task = TaskKind::Position;
  UNet<float> tasked(with_task);
  CHECK_THROWS_AS(load_checkpoint(dir / "good.ckpt", tasked.parameters()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("resumed training matches an uninterrupted run step for step") {
  auto dir = scratch("resume");
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    CAPTURE(to_string(v));
    auto cfg = tiny(v, TaskKind::Camera);
    TrainOptions opt;
    opt.seed = 5;
    opt.set_size = 2;
    opt.dropout = 0.3;
    const auto data = toy_data<float>(cfg, 3, 3);

    UNet<float> full(cfg);
    Trainer<float> a(full, make_linear_schedule(100), data, opt);
    std::vector<StepRecord> reference;
    for (int i = 0; i < 8; ++i) reference.push_back(a.step());

    UNet<float> first(cfg);
    Trainer<float> b(first, make_linear_schedule(100), data, opt);
    for (int i = 0; i < 4; ++i) CHECK(b.step().loss == reference[i].loss);
    save_checkpoint(dir / "mid.ckpt", first.parameters(), "");

    UNet<float> resumed(cfg);
    load_checkpoint(dir / "mid.ckpt", resumed.parameters());
    Trainer<float> c(resumed, make_linear_schedule(100), data, opt);
    CHECK(c.next_step() == 4);
    for (int i = 4; i < 8; ++i) {
      auto r = c.step();
      CHECK(r.step == reference[i].step);
      CHECK(r.loss == reference[i].loss);
      CHECK(r.dropped == reference[i].dropped);
    }
    CHECK(same_parameters(full, resumed));
  }
  fs::remove_all(dir);
}

TEST_CASE("trainer options and failure modes") {
  auto cfg = tiny(Variant::MisSa);
  UNet<float> net(cfg);
  const auto data = toy_data<float>(cfg, 2, 3);

  TrainOptions never;
  never.dropout = 0.0;
  Trainer<float> tr(net, make_linear_schedule(100), data, never);
  for (int i = 0; i < 30; ++i) CHECK_FALSE(tr.step().dropped);

  TrainOptions always;
  always.dropout = 1.0;
  UNet<float> net2(cfg);
  Trainer<float> tr2(net2, make_linear_schedule(100), data, always);
  for (int i = 0; i < 5; ++i) CHECK(tr2.step().dropped);

  TrainOptions bad;
  bad.set_size = 4;
  CHECK_THROWS_AS(Trainer<float>(net, make_linear_schedule(100), data, bad), std::invalid_argument);
  CHECK_THROWS_AS(Trainer<float>(net, make_linear_schedule(100), {}, TrainOptions{}), std::invalid_argument);
  auto blocked = cfg;
  blocked.block_size = 2;
  UNet<float> bnet(blocked);
  CHECK_THROWS_AS(Trainer<float>(bnet, make_linear_schedule(100), data, TrainOptions{}), std::invalid_argument);

  auto poisoned = data;
  poisoned[0].latents.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  poisoned[1].latents.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  UNet<float> net3(cfg);
  Trainer<float> tr3(net3, make_linear_schedule(100), poisoned, TrainOptions{});
  CHECK_THROWS_AS(tr3.step(), NonFiniteLoss);
}

TEST_CASE("a short run lowers the loss on a tiny fixed problem") {
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    CAPTURE(to_string(v));
    auto cfg = tiny(v);
    UNet<float> net(cfg);
    TrainOptions opt;
    opt.adam.lr = 3e-3;
    opt.dropout = 0.0;
    Trainer<float> tr(net, make_linear_schedule(100), toy_data<float>(cfg, 1, 2), opt);
    double head = 0, tail = 0;
    for (int i = 0; i < 120; ++i) {
      const double l = tr.step().loss;
      if (i < 20) head += l;
      if (i >= 100) tail += l;
    }
    CHECK(tail < head);
  }
}

TEST_CASE("corpus records become training examples") {
  auto dir = scratch("corpus");
  CorpusOptions co;
  co.sets = 2;
  co.n = 3;
  co.resolution = 8;
  auto m = build_corpus(co, dir);
  auto cfg = tiny(Variant::MisDino);
  cfg.latent_channels = 48;
  cfg.latent_height = 2;
  cfg.latent_width = 2;
  cfg.feature_tokens = 4;
  PatchStatEncoder enc(2, 4);
  auto data = load_training_data<float>(m, dir, cfg, &enc);
  REQUIRE(data.size() == 2);
  CHECK(data[0].latents.shape() == Shape{3, 48, 2, 2});
  CHECK(data[0].features.shape() == Shape{3, 4, 4});
  CHECK(data[0].task.kind == TaskKind::None);
  CHECK_THROWS_AS(load_training_data<float>(m, dir, cfg, nullptr), std::invalid_argument);
  cfg.latent_height = 4;
  CHECK_THROWS_AS(load_training_data<float>(m, dir, cfg, &enc), DimensionError);
  fs::remove_all(dir);
}
