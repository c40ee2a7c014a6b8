#include <doctest.h>

#include "mis/ops.hpp"
#include "mis/unet.hpp"
#include "test_support.hpp"

using namespace mis;
using mis::testing::gradcheck;
using mis::testing::probe_weights;
using mis::testing::random_tensor;

namespace {

UNetConfig tiny(Variant v, std::size_t block = 1) {
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
  c.feature_tokens = 2;
  c.feature_dim = 4;
  c.seed = 17;
  return c;
}

template <typename T>
Tensor<T> context_for(const UNet<T>& net, std::size_t n, Rng& rng) {
  if (net.config().variant == Variant::MisSa) {
    const auto& c = net.config();
    return random_tensor<T>({1, n, c.latent_channels, c.latent_height, c.latent_width}, rng);
  }
  return random_tensor<T>({1, n, net.config().feature_tokens, net.config().feature_dim}, rng);
}

template <typename T>
Tensor<T> image_slice(const Tensor<T>& eps, std::size_t i) {
  return slice(eps, 1, i, i + 1);
}

}  // namespace

TEST_CASE("attention placement rule") {
  CHECK(select_attention_kind(4, 8) == AttentionKind::Global);
  CHECK(select_attention_kind(16, 8) == AttentionKind::BlockSet);
  CHECK(select_attention_kind(8, 8) == AttentionKind::Global);
  CHECK(select_attention_kind(1024, kNoThreshold) == AttentionKind::Global);

  UNet<float> desk(UNetConfig{});
  CHECK(desk.attention_kinds() == std::vector{AttentionKind::BlockSet, AttentionKind::Global});
  UNetConfig dino;
  dino.variant = Variant::MisDino;
  CHECK(UNet<float>(dino).attention_kinds() == std::vector{AttentionKind::External, AttentionKind::External});
}

TEST_CASE("config validation") {
  auto c = tiny(Variant::MisSa);
  c.latent_height = 5;
  CHECK_THROWS_AS(UNet<float>{c}, std::invalid_argument);
  c = tiny(Variant::MisSa);
  c.channel_mult = {1};
  CHECK_THROWS_AS(UNet<float>{c}, std::invalid_argument);
  c = tiny(Variant::MisSa);
  c.groups = 3;
  CHECK_THROWS_AS(UNet<float>{c}, std::invalid_argument);
}

TEST_CASE("output shape, finiteness and determinism") {
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    UNet<float> net(tiny(v, v == Variant::MisSa ? 2 : 1));
    Rng rng(1);
    auto noisy = random_tensor<float>({2, 4, 3, 4, 4}, rng);
    Tensor<float> ctx = v == Variant::MisSa ? random_tensor<float>({2, 4, 3, 4, 4}, rng)
                                            : random_tensor<float>({2, 4, 2, 4}, rng);
    std::vector<double> t{5.0, 40.0};
    auto eps = net.forward(noisy, ctx, t);
    CHECK(eps.shape() == noisy.shape());
    CHECK(all_finite(eps));
    CHECK(bit_equal(eps, net.forward(noisy, ctx, t)));
    auto uncond = net.forward(noisy, net.zero_context(2, 4), t);
    CHECK(all_finite(uncond));
    CHECK_THROWS_AS(net.forward(noisy, ctx, std::vector<double>{1, 2, 3}), DimensionError);
  }
  UNet<float> sa(tiny(Variant::MisSa, 2));
  Tensor<float> odd({1, 3, 3, 4, 4});
  CHECK_THROWS_AS(sa.forward(odd, odd, std::vector<double>{1}), DimensionError);
}

TEST_CASE("paired form matches separate clean and noisy inputs") {
  UNet<double> net(tiny(Variant::MisSa));
  Rng rng(2);
  auto clean = random_tensor<double>({1, 3, 3, 4, 4}, rng);
  auto noisy = random_tensor<double>({1, 3, 3, 4, 4}, rng);
  auto paired = reshape(concat({reshape(clean, {1, 1, 3, 3, 4, 4}), reshape(noisy, {1, 1, 3, 3, 4, 4})}, 1),
                        {1, 2, 3, 3, 4, 4});
  std::vector<double> t{10};
  CHECK(bit_equal(net.forward_paired(paired, t), net.forward(noisy, clean, t)));
}

TEST_CASE("parameter count is a function of the config") {
  UNet<float> a(tiny(Variant::MisSa)), b(tiny(Variant::MisSa));
  CHECK(a.parameter_count() == b.parameter_count());
  CHECK(a.parameters().size() == b.parameters().size());
  auto c = tiny(Variant::MisSa);
  c.seed = 99;
  CHECK(UNet<float>(c).parameter_count() == a.parameter_count());
  CHECK(UNet<float>(UNetConfig{}).parameter_count() > a.parameter_count());
}

TEST_CASE("end-to-end block causality") {
  for (auto [v, block] : {std::pair{Variant::MisSa, std::size_t{1}}, std::pair{Variant::MisSa, std::size_t{2}},
                          std::pair{Variant::MisDino, std::size_t{1}}}) {
    UNet<float> net(tiny(v, block));
    const std::size_t n = 4;
    Rng rng(3);
    auto noisy = random_tensor<float>({1, n, 3, 4, 4}, rng);
    auto ctx = context_for(net, n, rng);
    std::vector<double> t{30};
    AttentionStats stats;
    auto base = net.forward(noisy, ctx, t, {}, &stats);
    CHECK(stats.queries > 0);
    BlockLayout layout(n, net.config().block_size_for_variant());
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<float> d(ctx.data().begin(), ctx.data().end());
      const std::size_t per = ctx.numel() / n;
      for (std::size_t e = j * per; e < (j + 1) * per; ++e) d[e] += 0.5f;
      auto pert = net.forward(noisy, Tensor<float>(ctx.shape(), d), t);
      for (std::size_t i = 0; i < n; ++i) {
        auto a = image_slice(base, i), b = image_slice(pert, i);
        if (layout.block_of(i) > layout.block_of(j)) CHECK(max_abs_diff(a, b) > 0);
        else CHECK(max_abs_diff(a, b) == 0.0);
      }
    }
  }
}

TEST_CASE("per-image timestep conditioning") {
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    auto cfg = tiny(v);
    Rng rng(4);
    const std::size_t n = 4;
    auto noisy = random_tensor<float>({1, n, 3, 4, 4}, rng);
    for (bool attention : {false, true}) {
      cfg.attention_enabled = attention;
      UNet<float> net(cfg);
      auto ctx = context_for(net, n, rng);
      std::vector<double> t{10, 10, 10, 10};
      auto base = net.forward(noisy, ctx, t);
      t[1] = 70;
      auto moved = net.forward(noisy, ctx, t);
      for (std::size_t i = 0; i < n; ++i) {
        const bool changed = max_abs_diff(image_slice(base, i), image_slice(moved, i)) > 0;
        // Noisy streams only reach other images through their own block.
        CHECK(changed == (i == 1));
      }
    }
  }
}

TEST_CASE("conv-only ablation ignores context") {
  auto cfg = tiny(Variant::MisSa);
  cfg.attention_enabled = false;
  UNet<float> net(cfg);
  Rng rng(5);
  auto noisy = random_tensor<float>({1, 2, 3, 4, 4}, rng);
  auto ctx = random_tensor<float>({1, 2, 3, 4, 4}, rng);
  std::vector<double> t{3};
  CHECK(bit_equal(net.forward(noisy, ctx, t), net.forward(noisy, net.zero_context(1, 2), t)));
}

TEST_CASE("task conditions") {
  for (auto v : {Variant::MisSa, Variant::MisDino}) {
    auto cfg = tiny(v);
    cfg.task = TaskKind::Position;
    UNet<float> net(cfg);
    Rng rng(6);
    const std::size_t n = 3;
    auto noisy = random_tensor<float>({1, n, 3, 4, 4}, rng);
    auto ctx = context_for(net, n, rng);
    std::vector<double> t{20};
    TaskCondition cond{TaskKind::Position, {}, {0, 1, 2}, false};
    auto with = net.forward(noisy, ctx, t, std::span(&cond, 1));
    auto without = net.forward(noisy, ctx, t);
    CHECK(max_abs_diff(with, without) > 0);
    auto zeroed = zero_condition(cond);
    CHECK(bit_equal(net.forward(noisy, ctx, t, std::span(&zeroed, 1)), without));

    TaskCondition wrong{TaskKind::Camera, {CameraPose::identity()}, {}, false};
    CHECK_THROWS(net.forward(noisy, ctx, t, std::span(&wrong, 1)));
  }
}

TEST_CASE("full U-Net passes finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (auto v : {Variant::MisSa, Variant::MisDino}) {
      auto cfg = tiny(v, v == Variant::MisSa ? 2 : 1);
      cfg.seed = seed;
      cfg.task = TaskKind::Camera;
      UNet<double> net(cfg);
      Rng rng(seed);
      auto noisy = random_tensor<double>({1, 2, 3, 4, 4}, rng, 1.0, true);
      auto ctx = v == Variant::MisSa ? random_tensor<double>({1, 2, 3, 4, 4}, rng, 1.0, true)
                                     : random_tensor<double>({1, 2, 2, 4}, rng, 1.0, true);
      TaskCondition cond{TaskKind::Camera,
                         {CameraPose::look_at_origin(0.3 * seed, 0.2, 2), CameraPose::look_at_origin(2.0, 0.1, 2)},
                         {},
                         false};
      auto pw = probe_weights({1, 2, 3, 4, 4}, seed);
      std::vector<double> t{double(seed * 7)};
      std::vector<Tensor<double>> inputs{noisy, ctx};
      for (const auto& [name, p] : net.parameters().params())
        if (name.find("enc0") == 0 || name.find("attn") == 0 || name.find("task_mlp") == 0 ||
            name.find("conv_out") == 0)
          inputs.push_back(p);
      auto r = gradcheck([&] { return sum(mul(net.forward(noisy, ctx, t, std::span(&cond, 1)), pw)); }, inputs,
                         1e-4, 8, seed);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }
}
