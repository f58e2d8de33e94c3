#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "tfrd/attention.hpp"
#include "tfrd/params.hpp"

namespace tfrd {

struct AttentionBenchRow {
  std::size_t n = 0;
  std::size_t c = 0;
  double ea_ms = 0;
  double dpa_ms = 0;
  std::size_t ea_peak = 0;   // largest single buffer, elements
  std::size_t dpa_peak = 0;
};

struct AttentionBenchOptions {
  std::size_t channels = 32;
  std::vector<std::size_t> sizes{1024, 2048, 4096};
  double min_seconds = 0.25;  // per (variant, n), split across repeats
  std::size_t min_repeats = 3;
  std::uint64_t seed = 3;
};

namespace detail {

// Best-of-repeats forward time in milliseconds, and the largest buffer seen.
template <typename F>
std::pair<double, std::size_t> time_forward(F&& f, const AttentionBenchOptions& opts) {
  NoGradGuard no_grad;
  double best = 1e300;
  double spent = 0;
  std::size_t peak = 0;
  for (std::size_t rep = 0; rep < opts.min_repeats || spent < opts.min_seconds; ++rep) {
    AllocationProbe probe;
    const auto t0 = std::chrono::steady_clock::now();
    auto out = f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    peak = std::max(peak, probe.largest());
    best = std::min(best, s);
    spent += s;
    if (rep > 10000) break;
  }
  return {best * 1e3, peak};
}

}  // namespace detail

/// Forward wall time of efficient vs dot-product attention with
/// n_Q = n_P = n at fixed c.
inline std::vector<AttentionBenchRow> bench_attention(const AttentionBenchOptions& opts = {}) {
  std::vector<AttentionBenchRow> rows;
  Rng rng(opts.seed);
  for (std::size_t n : opts.sizes) {
    const std::size_t c = opts.channels;
    auto q = Tensor<float>::from({n, c}, rng.uniform_vector<float>(n * c, -1, 1));
    auto k = Tensor<float>::from({n, c}, rng.uniform_vector<float>(n * c, -1, 1));
    auto v = Tensor<float>::from({n, c}, rng.uniform_vector<float>(n * c, -1, 1));
    AttentionBenchRow row;
    row.n = n;
    row.c = c;
    std::tie(row.ea_ms, row.ea_peak) = detail::time_forward([&] { return efficient_attention(q, k, v); }, opts);
    std::tie(row.dpa_ms, row.dpa_peak) = detail::time_forward([&] { return dot_product_attention(q, k, v); }, opts);
    rows.push_back(row);
  }
  return rows;
}

inline std::string render_bench_csv(const std::vector<AttentionBenchRow>& rows) {
  std::string out = "n,c,ea_ms,dpa_ms,ea_peak_elems,dpa_peak_elems\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.4f,%.4f,%zu,%zu\n", r.n, r.c, r.ea_ms, r.dpa_ms, r.ea_peak, r.dpa_peak);
    out += buf;
  }
  return out;
}

}  // namespace tfrd
