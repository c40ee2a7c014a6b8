#include <doctest.h>

#include "mis/attention.hpp"
#include "mis/ops.hpp"
#include "test_support.hpp"

using namespace mis;
using mis::testing::gradcheck;
using mis::testing::probe_weights;
using mis::testing::random_tensor;

namespace {

struct Patch {
  std::size_t image, y, x;
};

Patch decode(std::size_t index, std::size_t h, std::size_t w) {
  return {index / (h * w), (index / w) % h, index % w};
}

// Enumerates (q, k) pairs directly from image indices rather than block ranges.
AttentionMask oracle_global(std::size_t n, std::size_t b, std::size_t h, std::size_t w) {
  const std::size_t l = n * h * w;
  AttentionMask m(l, l);
  for (std::size_t q = 0; q < l; ++q)
    for (std::size_t k = 0; k < l; ++k) m.set(q, k, decode(k, h, w).image / b < decode(q, h, w).image / b);
  return m;
}

AttentionMask oracle_self(std::size_t n, std::size_t b, std::size_t h, std::size_t w) {
  const std::size_t l = n * h * w;
  AttentionMask m(l, l);
  for (std::size_t q = 0; q < l; ++q)
    for (std::size_t k = 0; k < l; ++k) m.set(q, k, decode(k, h, w).image / b == decode(q, h, w).image / b);
  return m;
}

}  // namespace

TEST_CASE("mask builders match brute-force enumeration") {
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t b = 1; b <= n; ++b) {
      if (n % b != 0) continue;
      BlockLayout layout(n, b);
      for (std::size_t h = 1; h <= 3; ++h)
        for (std::size_t w = 1; w <= 3; ++w) {
          CHECK(build_global_causal_mask(layout, h, w) == oracle_global(n, b, h, w));
          CHECK(build_block_self_mask(layout, h, w) == oracle_self(n, b, h, w));
        }
      CHECK(build_set_axis_causal_mask(layout) == oracle_global(n, b, 1, 1));
    }
}

TEST_CASE("external mask equals the global pattern at one image per block") {
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t s = 1; s <= 4; ++s) {
      auto ext = build_external_causal_mask(n, s);
      auto ref = oracle_global(n, 1, 1, 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n * s; ++k) CHECK(ext.allowed(i, k) == ref.allowed(i, k / s));
    }
}

TEST_CASE("mask examples") {
  auto m = build_global_causal_mask(BlockLayout(4, 2), 1, 1);
  CHECK(m.allowed_in_row(0) == 0);
  CHECK(m.allowed_in_row(1) == 0);
  CHECK(m.allowed_in_row(2) == 2);
  CHECK(m.allowed(3, 1));
  CHECK_FALSE(m.allowed(3, 2));
  CHECK_THROWS_AS(BlockLayout(5, 2), DimensionError);

  auto bias = m.to_bias<float>();
  CHECK(bias.at({2, 0}) == 0.0f);
  CHECK(bias.at({0, 0}) == mask_sentinel<float>());
}

TEST_CASE("first block of noisy images receives no cross-attention update") {
  Rng rng(21);
  const std::size_t n = 4, b = 2;
  BlockLayout layout(n, b);
  auto params = MultiHeadParams<float>::identity(4, 2);
  auto zn = random_tensor<float>({1, n, 2, 2, 4}, rng);
  auto zc = random_tensor<float>({1, n, 2, 2, 4}, rng);
  for (auto* fn : {&global_cross_attention<float>, &block_set_cross_attention<float>}) {
    auto out = (*fn)(zn, zc, layout, params, nullptr);
    auto first = slice(out, 1, 0, b);
    for (float v : first.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("set-axis equals global when spatial extent is one") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(1, 3);
    const std::size_t b = pick(rng), k = pick(rng), n = b * k;
    BlockLayout layout(n, b);
    ParameterStore<double> store;
    auto params = MultiHeadParams<double>::create(store, "x", 8, 2, seed);
    auto zn = random_tensor<double>({2, n, 1, 1, 8}, rng);
    auto zc = random_tensor<double>({2, n, 1, 1, 8}, rng);
    auto g = global_cross_attention(zn, zc, layout, params);
    auto s = block_set_cross_attention(zn, zc, layout, params);
    CHECK(max_abs_diff(g, s) <= 1e-6);
  }
}

TEST_CASE("identity projections reduce to plain scaled dot-product attention") {
  Rng rng(4);
  auto q = random_tensor<double>({1, 2, 2}, rng);
  auto k = random_tensor<double>({1, 3, 2}, rng);
  auto params = MultiHeadParams<double>::identity(2, 1);
  AttentionMask full(2, 3, true);
  auto out = multi_head_attention(q, k, k, full, params);
  for (std::size_t i = 0; i < 2; ++i) {
    double logits[3], z = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      logits[j] = (q.at({0, i, 0}) * k.at({0, j, 0}) + q.at({0, i, 1}) * k.at({0, j, 1})) / std::sqrt(2.0);
      z += std::exp(logits[j]);
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double ref = 0;
      for (std::size_t j = 0; j < 3; ++j) ref += std::exp(logits[j]) / z * k.at({0, j, c});
      CHECK(std::abs(out.at({0, i, c}) - ref) < 1e-12);
    }
  }
}

TEST_CASE("cross-attention outputs respect causality bit-exactly") {
  Rng rng(8);
  const std::size_t n = 6, b = 2;
  BlockLayout layout(n, b);
  ParameterStore<float> store;
  auto params = MultiHeadParams<float>::create(store, "a", 8, 2, 99);
  auto zn = random_tensor<float>({1, n, 2, 3, 8}, rng);
  auto zc = random_tensor<float>({1, n, 2, 3, 8}, rng);
  for (std::size_t j = 0; j < n; ++j) {
    auto zc2 = Tensor<float>(zc.shape(), std::vector<float>(zc.data().begin(), zc.data().end()));
    auto d = zc2.mutable_data();
    for (std::size_t e = j * 48; e < (j + 1) * 48; ++e) d[e] += 1.0f;
    for (auto* fn : {&global_cross_attention<float>, &block_set_cross_attention<float>}) {
      auto base = (*fn)(zn, zc, layout, params, nullptr);
      auto pert = (*fn)(zn, zc2, layout, params, nullptr);
      for (std::size_t i = 0; i < n; ++i) {
        auto a = slice(base, 1, i, i + 1), p = slice(pert, 1, i, i + 1);
        if (layout.block_of(i) <= layout.block_of(j)) {
          CHECK(a.data().size() == p.data().size());
          bool same = true;
          for (std::size_t e = 0; e < a.numel(); ++e) same &= a.data()[e] == p.data()[e];
          CHECK(same);
        } else {
          CHECK(max_abs_diff(a, p) > 0.0);
        }
      }
    }
  }
}

TEST_CASE("external cross-attention is causal over feature tokens") {
  Rng rng(12);
  const std::size_t n = 4, s = 3;
  ParameterStore<float> store;
  auto params = MultiHeadParams<float>::create(store, "e", 8, 2, 5);
  auto& proj = store.add_uniform("e.proj", {6, 8}, 6, 5);
  auto zn = random_tensor<float>({1, n, 2, 2, 8}, rng);
  auto v = random_tensor<float>({1, n, s, 6}, rng);
  auto base = external_cross_attention(zn, v, params, proj);
  auto v2 = Tensor<float>(v.shape(), std::vector<float>(v.data().begin(), v.data().end()));
  v2.mutable_data()[1 * s * 6 + 2] += 2.0f;
  auto pert = external_cross_attention(zn, v2, params, proj);
  for (std::size_t i = 0; i <= 1; ++i) CHECK(bit_equal(slice(base, 1, i, i + 1), slice(pert, 1, i, i + 1)));
  for (std::size_t i = 2; i < n; ++i) CHECK(max_abs_diff(slice(base, 1, i, i + 1), slice(pert, 1, i, i + 1)) > 0);
  auto first = slice(base, 1, 0, 1);
  for (float x : first.data()) CHECK(x == 0.0f);
}

TEST_CASE("blockwise self-attention is equivariant to permutations within a block") {
  Rng rng(30);
  const std::size_t n = 4, b = 2;
  BlockLayout layout(n, b);
  ParameterStore<double> store;
  auto params = MultiHeadParams<double>::create(store, "s", 4, 2, 1);
  auto z = random_tensor<double>({1, n, 1, 2, 4}, rng);
  auto y = blockwise_self_attention(z, layout, params);
  // Swap images 2 and 3 (same block).
  auto swapped = concat({slice(z, 1, 0, 2), slice(z, 1, 3, 4), slice(z, 1, 2, 3)}, 1);
  auto ys = blockwise_self_attention(swapped, layout, params);
  CHECK(max_abs_diff(slice(ys, 1, 2, 3), slice(y, 1, 3, 4)) < 1e-12);
  CHECK(max_abs_diff(slice(ys, 1, 3, 4), slice(y, 1, 2, 3)) < 1e-12);
  CHECK(max_abs_diff(slice(ys, 1, 0, 2), slice(y, 1, 0, 2)) < 1e-12);
}

TEST_CASE("key-visit counts follow the analytic totals") {
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
    std::size_t expect_g = 0, expect_s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      expect_g += h * w * layout.block_of(i) * b * h * w;
      expect_s += h * w * layout.block_of(i) * b;
    }
    CHECK(g.key_visits == expect_g);
    CHECK(s.key_visits == expect_s);
    CHECK(g.queries == n * h * w);
    CHECK(s.queries == n * h * w);
  }
}

TEST_CASE("attention ops pass finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ParameterStore<double> store;
    auto params = MultiHeadParams<double>::create(store, "p", 4, 2, seed);
    auto zn = random_tensor<double>({1, 4, 2, 1, 4}, rng, 1.0, true);
    auto zc = random_tensor<double>({1, 4, 2, 1, 4}, rng, 1.0, true);
    auto pw = probe_weights({1, 4, 2, 1, 4}, seed);
    BlockLayout layout(4, 2);
    std::vector<Tensor<double>> inputs{zn, zc, params.wq, params.wk, params.wv, params.wo};
    CHECK(gradcheck([&] { return sum(mul(global_cross_attention(zn, zc, layout, params), pw)); }, inputs)
              .max_rel_error <= 1e-4);
    CHECK(gradcheck([&] { return sum(mul(block_set_cross_attention(zn, zc, layout, params), pw)); }, inputs)
              .max_rel_error <= 1e-4);
    CHECK(gradcheck([&] { return sum(mul(blockwise_self_attention(zn, layout, params), pw)); },
                    {zn, params.wq, params.wk, params.wv, params.wo})
              .max_rel_error <= 1e-4);
    auto v = random_tensor<double>({1, 4, 3, 5}, rng, 1.0, true);
    auto& proj = store.add_uniform("p.proj", {5, 4}, 5, seed);
    CHECK(gradcheck([&] { return sum(mul(external_cross_attention(zn, v, params, proj), pw)); },
                    {zn, v, proj, params.wq, params.wv})
              .max_rel_error <= 1e-4);
  }
}
