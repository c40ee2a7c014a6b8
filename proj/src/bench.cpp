#include "mis/bench.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <fmt/format.h>

#include "mis/attention.hpp"

namespace mis {

std::size_t analytic_global_visits(std::size_t n, std::size_t block, std::size_t h, std::size_t w) {
  const std::size_t k = n / block;
  // sum over blocks b of (B H W queries) * (b B H W keys)
  return block * h * w * block * h * w * (k * (k - 1) / 2);
}

std::size_t analytic_set_visits(std::size_t n, std::size_t block, std::size_t h, std::size_t w) {
  const std::size_t k = n / block;
  return block * h * w * block * (k * (k - 1) / 2);
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Tensor<float> random_latents(const Shape& shape, Rng& rng) {
  std::normal_distribution<float> d;
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<float>(shape, std::move(v));
}

}  // namespace

BenchRow bench_attention(const BenchGrid& g, Rng& rng) {
  if (g.block == 0 || g.n % g.block != 0) throw std::invalid_argument("block size must divide n");
  if (g.repeats == 0) throw std::invalid_argument("repeats must be positive");
  const BlockLayout layout(g.n, g.block);
  ParameterStore<float> store;
  const auto params = MultiHeadParams<float>::create(store, "bench", g.channels, 1, rng());
  const Shape shape{1, g.n, g.height, g.width, g.channels};
  const auto zn = random_latents(shape, rng);
  const auto zc = random_latents(shape, rng);

  BenchRow row;
  row.grid = g;
  row.expected_global = analytic_global_visits(g.n, g.block, g.height, g.width);
  row.expected_set = analytic_set_visits(g.n, g.block, g.height, g.width);
  AttentionStats gs, ss;
  global_cross_attention(zn, zc, layout, params, &gs);
  block_set_cross_attention(zn, zc, layout, params, &ss);
  row.global_visits = gs.key_visits;
  row.set_visits = ss.key_visits;

  using Clock = std::chrono::steady_clock;
  auto time_ms = [](auto&& fn) {
    const auto t0 = Clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  std::vector<double> tg, ts;
  // Interleave so drift in machine load hits both forms alike.
  for (std::size_t r = 0; r < g.repeats; ++r) {
    tg.push_back(time_ms([&] { global_cross_attention(zn, zc, layout, params); }));
    ts.push_back(time_ms([&] { block_set_cross_attention(zn, zc, layout, params); }));
  }
  row.global_median_ms = median(tg);
  row.set_median_ms = median(ts);
  return row;
}

std::vector<BenchGrid> default_bench_grids(std::size_t repeats) {
  std::vector<BenchGrid> out;
  for (std::size_t hw : {1, 4, 8, 16})
    for (std::size_t n : {4, 8})
      for (std::size_t b : {1, 2}) out.push_back({n, b, hw, hw, 16, repeats});
  return out;
}

std::string bench_csv_header() {
  return "n,block,height,width,channels,global_visits,set_visits,expected_global,expected_set,counts_match,"
         "global_median_ms,set_median_ms\n";
}

std::string bench_csv_row(const BenchRow& r) {
  const auto& g = r.grid;
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{:.6f},{:.6f}\n", g.n, g.block, g.height, g.width, g.channels,
                     r.global_visits, r.set_visits, r.expected_global, r.expected_set, r.counts_match() ? 1 : 0,
                     r.global_median_ms, r.set_median_ms);
}

}  // namespace mis
