// SPDX-License-Identifier: Apache-2.0
// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sketch/kernels.hpp"

namespace {

namespace k = sketch::kernels;

std::vector<float> random_floats(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_floats(n * n, 1), b = random_floats(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm(a, b, c, n, n, n);
    else k::serial::gemm(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_floats(n * n, 3), b = random_floats(n * n, 4);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_nt(a, b, c, n, n, n);
    else k::serial::gemm_nt(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_SeparableFilter(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> src(n * n);
  std::mt19937 rng(5);
  for (auto& x : src) x = rng() % 256;
  const std::vector<double> taps(11, 1.0 / 11.0);
  std::vector<double> dst((n - 10) * (n - 10));
  for (auto _ : state) {
    if constexpr (Parallel) k::separable_filter_valid(src, n, n, taps, dst);
    else k::serial::separable_filter_valid(src, n, n, taps, dst);
    benchmark::DoNotOptimize(dst.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT<false>)->Name("gemm_nt/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT<true>)->Name("gemm_nt/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_SeparableFilter<false>)->Name("ssim_filter/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_SeparableFilter<true>)->Name("ssim_filter/openmp")->Arg(64)->Arg(512);

BENCHMARK_MAIN();
