#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mis/conditioning.hpp"
#include "mis/ops.hpp"
#include "test_support.hpp"

using namespace mis;
using mis::testing::gradcheck;
using mis::testing::probe_weights;
using mis::testing::random_tensor;

namespace {

Image solid(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.rgb[i * 3] = r;
    img.rgb[i * 3 + 1] = g;
    img.rgb[i * 3 + 2] = b;
  }
  return img;
}

}  // namespace

TEST_CASE("sinusoidal embedding values") {
  auto e0 = sinusoidal_embed(0.0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(e0[2 * i] == 0.0);
    CHECK(e0[2 * i + 1] == 1.0);
  }
  auto e1 = sinusoidal_embed(1.0, 4);
  CHECK(e1[0] == doctest::Approx(std::sin(1.0)));
  CHECK(e1[1] == doctest::Approx(std::cos(1.0)));
  CHECK(e1[2] == doctest::Approx(std::sin(1e-4)));
  CHECK_THROWS_AS(sinusoidal_embed(1.0, 3), DimensionError);

  SUBCASE("distinct positions give distinct embeddings") {
    for (std::size_t a = 0; a < 30; ++a)
      for (std::size_t b = a + 1; b < 30; ++b) CHECK(sinusoidal_embed(double(a), 16) != sinusoidal_embed(double(b), 16));
  }
}

TEST_CASE("camera poses") {
  auto id = CameraPose::identity();
  CHECK(id.apply({1, 2, 3}) == std::array<double, 3>{1, 2, 3});
  auto bad = id.matrix();
  bad[0] = 1.1;
  CHECK_THROWS_AS(CameraPose{bad}, std::invalid_argument);
  auto reflect = id.matrix();
  reflect[0] = -1;
  CHECK_THROWS_AS(CameraPose{reflect}, std::invalid_argument);

  for (int k = 0; k < 12; ++k) {
    const double az = 2 * std::numbers::pi * k / 12;
    auto pose = CameraPose::look_at_origin(az, 0.3, 3.0);
    CHECK(is_rigid(pose.matrix()));
    auto origin = pose.apply({0, 0, 0});
    // Origin lies straight ahead of the camera at the ring radius.
    CHECK(std::abs(origin[0]) < 1e-9);
    CHECK(std::abs(origin[1]) < 1e-9);
    CHECK(std::abs(std::abs(origin[2]) - 3.0) < 1e-9);
  }
}

TEST_CASE("task embedders") {
  ParameterStore<double> store;
  auto cam = Mlp<double>::create(store, "cam", 12, 16, 8, 3);
  auto pos = Mlp<double>::create(store, "pos", 16, 16, 8, 3);

  TaskCondition c{TaskKind::Camera, {CameraPose::identity(), CameraPose::look_at_origin(1.0, 0.2, 2.0)}, {}, false};
  auto e = embed_task(c, cam);
  CHECK(e.shape() == Shape{2, 8});
  CHECK(max_abs_diff(reshape(slice(e, 0, 0, 1), {8}), camera_embed(CameraPose::identity(), cam)) < 1e-12);

  auto z = embed_task(zero_condition(c), cam);
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK(zero_condition(e).shape() == e.shape());

  TaskCondition p{TaskKind::Position, {}, {0, 1, 2}, false};
  auto ep = embed_task(p, pos);
  CHECK(ep.shape() == Shape{3, 8});
  CHECK(max_abs_diff(reshape(slice(ep, 0, 2, 3), {8}), position_embed(2, pos)) < 1e-12);
  CHECK(max_abs_diff(slice(ep, 0, 0, 1), slice(ep, 0, 1, 2)) > 0);

  CHECK(parse_task_kind(to_string(TaskKind::Camera)) == TaskKind::Camera);
  CHECK_THROWS(parse_task_kind("nonsense"));
}

TEST_CASE("embedders pass finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParameterStore<double> store;
    auto mlp = Mlp<double>::create(store, "m", 12, 10, 6, seed);
    TaskCondition c{TaskKind::Camera,
                    {CameraPose::look_at_origin(0.5 * seed, 0.1, 2.0), CameraPose::look_at_origin(seed, 0.4, 2.0)},
                    {},
                    false};
    auto pw = probe_weights({2, 6}, seed);
    auto r = gradcheck([&] { return sum(mul(embed_task(c, mlp), pw)); }, {mlp.w1, mlp.b1, mlp.w2, mlp.b2});
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("condition injection broadcasts over spatial axes") {
  Rng rng(2);
  auto hidden = random_tensor<double>({1, 2, 3, 2, 4}, rng);
  auto emb = random_tensor<double>({1, 2, 4}, rng);
  auto out = inject_condition(hidden, emb, 4);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t c = 0; c < 4; ++c)
          CHECK(out.at({0, n, y, x, c}) == hidden.at({0, n, y, x, c}) + emb.at({0, n, c}));
  CHECK(bit_equal(inject_condition(hidden, zero_condition(emb), 4), hidden));
  CHECK_THROWS_AS(inject_condition(hidden, emb, 2), DimensionError);
}

TEST_CASE("patch-stat encoder") {
  PatchStatEncoder enc;
  CHECK(enc.tokens() == 16);
  CHECK(enc.dim() == 32);
  auto a = enc.encode(solid(32, 32, 10, 200, 30));
  CHECK(a.size() == 16 * 32);
  CHECK(a == enc.encode(solid(32, 32, 10, 200, 30)));

  auto zero = enc.encode(solid(32, 32, 0, 0, 0));
  for (float v : zero) CHECK(v == 0.0f);

  SUBCASE("a pixel only affects its own patch token") {
    auto img = solid(32, 32, 100, 100, 100);
    auto base = enc.encode(img);
    img.rgb[(3 * 32 + 12) * 3] = 255;  // x=12, y=3 -> patch (1, 0)
    auto moved = enc.encode(img);
    for (std::size_t t = 0; t < 16; ++t) {
      bool same = std::equal(base.begin() + t * 32, base.begin() + (t + 1) * 32, moved.begin() + t * 32);
      CHECK(same == (t != 1));
    }
  }

  std::vector<Image> imgs{solid(32, 32, 1, 2, 3), solid(32, 32, 50, 60, 70)};
  auto set = encode_set(enc, imgs);
  CHECK(set.features.shape() == Shape{2, 16, 32});
  CHECK(set.encoder_id == enc.id());
}

TEST_CASE("camera embedding properties") {
  auto zero = Mlp<double>::zeros(12, 16, 8);
  const auto ez = camera_embed(CameraPose::identity(), zero);
  for (double v : ez.data()) CHECK(v == 0.0);

  ParameterStore<double> store;
  auto mlp = Mlp<double>::create(store, "cam", 12, 32, 8, 11);
  auto a = camera_embed(CameraPose::look_at_origin(0.7, 0.3, 3.0), mlp);
  auto b = camera_embed(CameraPose::look_at_origin(0.7 + 1e-7, 0.3, 3.0), mlp);
  CHECK(max_abs_diff(a, b) <= 1e-4);

  std::vector<Tensor<double>> views;
  for (int k = 0; k < 12; ++k)
    views.push_back(camera_embed(CameraPose::look_at_origin(2 * std::numbers::pi * k / 12, 0.35, 3.0), mlp));
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = i + 1; j < 12; ++j) CHECK(max_abs_diff(views[i], views[j]) > 1e-6);
}

TEST_CASE("position embedding properties") {
  ParameterStore<double> store;
  auto mlp = Mlp<double>::create(store, "pos", 16, 16, 8, 4);
  CHECK(bit_equal(position_embed(3, mlp), position_embed(3, mlp)));
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = a + 1; b < 8; ++b) CHECK(sinusoidal_embed(double(a), 16) != sinusoidal_embed(double(b), 16));
  // Absolute encoding: shifting every index moves every embedding.
  TaskCondition base{TaskKind::Position, {}, {0, 1, 2, 3}, false};
  TaskCondition shifted{TaskKind::Position, {}, {5, 6, 7, 8}, false};
  auto eb = embed_task(base, mlp), es = embed_task(shifted, mlp);
  for (std::size_t i = 0; i < 4; ++i) CHECK(max_abs_diff(slice(eb, 0, i, i + 1), slice(es, 0, i, i + 1)) > 1e-6);
}

TEST_CASE("injection is linear and per-image") {
  Rng rng(6);
  auto hidden = random_tensor<double>({1, 3, 4, 2, 2}, rng);
  auto a = random_tensor<double>({1, 3, 4}, rng);
  auto b = random_tensor<double>({1, 3, 4}, rng);
  auto twice = inject_condition(inject_condition(hidden, a, Variant::MisSa), b, Variant::MisSa);
  CHECK(max_abs_diff(twice, inject_condition(hidden, add(a, b), Variant::MisSa)) < 1e-12);

  auto bump = Tensor<double>::zeros({1, 3, 4});
  bump.mutable_data()[1 * 4 + 2] = 1.0;
  auto moved = inject_condition(hidden, bump, Variant::MisSa);
  for (std::size_t n = 0; n < 3; ++n)
    CHECK(bit_equal(slice(moved, 1, n, n + 1), slice(hidden, 1, n, n + 1)) == (n != 1));

  auto feats = random_tensor<double>({1, 3, 5, 4}, rng);
  auto fo = inject_condition(feats, a, Variant::MisDino);
  CHECK(fo.at({0, 2, 4, 1}) == feats.at({0, 2, 4, 1}) + a.at({0, 2, 1}));

  TaskCondition c{TaskKind::Position, {}, {1, 2}, false};
  auto z = zero_condition(c);
  CHECK(zero_condition(z).zeroed);
  CHECK(zero_condition(z).steps == z.steps);
  CHECK_FALSE(z.active());
}

TEST_CASE("encoder rejects indivisible images and is substitutable") {
  PatchStatEncoder enc;
  CHECK_THROWS_AS(enc.encode(Image(30, 32)), DimensionError);
  PatchStatEncoder other(2, 8, 99);
  CHECK(other.tokens() == 4);
  CHECK(other.encode(solid(8, 8, 1, 2, 3)).size() == 32);
  CHECK(other.id() != enc.id());
  std::vector<Image> set{solid(8, 8, 1, 2, 3), solid(8, 8, 9, 9, 9)};
  auto fs = encode_set(other, set);
  CHECK(fs.features.shape() == Shape{2, 4, 8});
  CHECK(fs.encoder_id == other.id());
}
