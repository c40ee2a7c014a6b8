#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mis/rng.hpp"

namespace mis {

struct BenchGrid {
  std::size_t n = 4;
  std::size_t block = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 16;
  std::size_t repeats = 20;
};

struct BenchRow {
  BenchGrid grid;
  std::size_t global_visits = 0;
  std::size_t set_visits = 0;
  std::size_t expected_global = 0;
  std::size_t expected_set = 0;
  double global_median_ms = 0.0;
  double set_median_ms = 0.0;

  bool counts_match() const { return global_visits == expected_global && set_visits == expected_set; }
};

/// Global: each query in block b sees B H W keys from every earlier block.
std::size_t analytic_global_visits(std::size_t n, std::size_t block, std::size_t h, std::size_t w);
/// Set axis: each query in block b sees B keys per earlier block.
std::size_t analytic_set_visits(std::size_t n, std::size_t block, std::size_t h, std::size_t w);

/// Times both cross-attention forms on random inputs (median wall time over
/// grid.repeats runs) and records their counted key visits.
BenchRow bench_attention(const BenchGrid& grid, Rng& rng);

std::vector<BenchGrid> default_bench_grids(std::size_t repeats = 20);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);

}  // namespace mis
