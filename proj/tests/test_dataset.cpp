#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "mis/dataset.hpp"
#include "mis/io.hpp"
#include "mis/ops.hpp"

using namespace mis;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mis_test_" + name);
  fs::remove_all(p);
  return p;
}

std::array<double, 3> mean_color(const Image& img) {
  std::array<double, 3> m{};
  for (std::size_t i = 0; i < img.width * img.height; ++i)
    for (std::size_t c = 0; c < 3; ++c) m[c] += img.rgb[i * 3 + c];
  for (auto& v : m) v /= static_cast<double>(img.width * img.height);
  return m;
}

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST_CASE("patchify codec") {
  Image img(32, 32);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>((i * 37) % 256);
  auto z = ae_encode(img);
  CHECK(z.shape() == Shape{48, 8, 8});
  CHECK(ae_decode(z) == img);
  CHECK(ae_decode(ae_encode<double>(img)) == img);

  auto zero = ae_encode(Image(32, 32));
  for (float v : zero.data()) CHECK(v == -1.0f);
  // Pixel (5, 2), channel 1 lives in patch (1, 0) at offset dx = 1, dy = 2.
  CHECK(z.at({(2 * 4 + 1) * 3 + 1, 0, 1}) == doctest::Approx(2.0 * img.at(5, 2, 1) / 255.0 - 1.0));
  CHECK_THROWS_AS(ae_encode(Image(30, 32)), DimensionError);

  std::vector<Image> set{img, Image(32, 32, 200)};
  CHECK(ae_encode_set(set).shape() == Shape{2, 48, 8, 8});
}

TEST_CASE("caption filter boundary") {
  auto words = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w");
    return s;
  };
  CHECK(caption_filter(words(77)));
  CHECK_FALSE(caption_filter(words(78)));
  CHECK(caption_filter(""));
  CHECK(count_tokens("  a\tb\n c  ") == 3);
  CHECK(caption_filter(words(5), 5));
  CHECK_FALSE(caption_filter(words(6), 5));
}

TEST_CASE("scene synthesis") {
  Rng rng(1);
  auto spec = random_scene(rng);
  CHECK(spec.token_count() == count_tokens(spec.text()));
  auto a = synthesize_set(spec, 5, 42);
  auto b = synthesize_set(spec, 5, 42);
  CHECK(a.images == b.images);
  CHECK(a.images.size() == 5);
  std::set<std::uint64_t> seeds(a.seeds.begin(), a.seeds.end());
  CHECK(seeds.size() == 5);
  CHECK(a.images[0] != a.images[1]);
  CHECK(synthesize_set(spec, 1, 3).images.size() == 1);

  SUBCASE("sets are more coherent within than across") {
    Rng r(9);
    int wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
      SceneSpec s1 = random_scene(r), s2 = random_scene(r);
      while (s2.color == s1.color && s2.background == s1.background) s2 = random_scene(r);
      auto x = synthesize_set(s1, 4, r()), y = synthesize_set(s2, 4, r());
      double within = 0, across = 0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          if (i != j) within += dist(mean_color(x.images[i]), mean_color(x.images[j])) / 12;
          across += dist(mean_color(x.images[i]), mean_color(y.images[j])) / 16;
        }
      wins += within < across;
    }
    CHECK(wins >= 95);
  }
}

TEST_CASE("multiview and procedure rendering") {
  Rng rng(2);
  auto obj = random_object(rng);
  auto poses = ring_poses();
  CHECK(poses.size() == 12);
  std::set<std::vector<std::uint8_t>> distinct;
  for (const auto& p : poses) {
    CHECK(is_rigid(p.matrix()));
    distinct.insert(render_object(obj, p).rgb);
  }
  CHECK(distinct.size() > 1);

  SceneSpec spec;
  spec.color = "yellow";
  std::size_t prev = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    auto img = render_procedure_step(spec, k, 5, 11);
    std::size_t lit = 0;
    for (std::size_t i = 0; i < img.width * img.height; ++i) lit += img.rgb[i * 3] == 235;
    if (k > 0) CHECK(lit > prev);
    prev = lit;
  }
}

TEST_CASE("file formats") {
  auto dir = scratch("formats");
  Image img(8, 4);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 5);
  write_png(dir / "a.png", img);
  CHECK(read_png(dir / "a.png") == img);
  write_ppm(dir / "a.ppm", img);
  CHECK(read_image(dir / "a.ppm") == img);
  CHECK_THROWS_AS(read_png(dir / "a.ppm"), FormatError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);

  Tensor<float> t({2, 3}, {1, -2, 3.5f, 0, 1e-7f, -0.f});
  write_mist(dir / "t.mist", t);
  CHECK(bit_equal(read_mist(dir / "t.mist"), t));
  auto bytes = read_bytes(dir / "t.mist");
  CHECK(bytes.size() == 16 + 2 * 4 + 6 * 4);
  bytes[0] = 'X';
  write_bytes(dir / "bad.mist", bytes);
  CHECK_THROWS_AS(read_mist(dir / "bad.mist"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("corpus build is deterministic and validated") {
  auto d1 = scratch("corpus1"), d2 = scratch("corpus2");
  CorpusOptions opt;
  opt.sets = 4;
  opt.seed = 7;
  auto m1 = build_corpus(opt, d1);
  build_corpus(opt, d2);
  CHECK(m1.records.size() == 4);
  CHECK(read_bytes(d1 / kManifestFile) == read_bytes(d2 / kManifestFile));
  for (const auto& r : m1.records)
    for (const auto& f : r.files) CHECK(read_bytes(d1 / f) == read_bytes(d2 / f));
  CHECK(load_manifest(d1 / kManifestFile) == m1);
  for (const auto& r : m1.records) CHECK(caption_filter(r.spec_text));

  fs::remove(d1 / m1.records[0].files[0]);
  CHECK_THROWS_AS(load_manifest(d1 / kManifestFile), IoError);

  SUBCASE("multiview") {
    auto d = scratch("mv");
    CorpusOptions mv;
    mv.kind = CorpusKind::Multiview;
    mv.sets = 2;
    build_corpus(mv, d);
    auto m = load_manifest(d / kManifestFile);
    for (const auto& r : m.records) {
      CHECK(r.files.size() == 12);
      CHECK(r.poses.size() == 12);
      auto task = record_task(r);
      CHECK(task.kind == TaskKind::Camera);
      CHECK(task.poses.size() == 12);
    }
    fs::remove_all(d);
  }
  SUBCASE("procedure") {
    auto d = scratch("proc");
    CorpusOptions pr;
    pr.kind = CorpusKind::Procedure;
    pr.sets = 2;
    pr.n = 6;
    auto m = build_corpus(pr, d);
    for (const auto& r : m.records) CHECK(r.steps == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    fs::remove_all(d);
  }
  SUBCASE("empty corpus") {
    auto d = scratch("empty");
    CorpusOptions e;
    e.sets = 0;
    build_corpus(e, d);
    CHECK(load_manifest(d / kManifestFile).records.empty());
    fs::remove_all(d);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("caption filter rejects some generated captions") {
  Rng rng(5);
  std::size_t rejected = 0;
  for (int i = 0; i < 200; ++i) rejected += !caption_filter(random_scene(rng).text());
  CHECK(rejected > 0);
  CHECK(rejected < 200);
}
