// Serial vs OpenMP kernels at head-sized shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "xdt/kernels.hpp"
#include "xdt/rng.hpp"

namespace {

using xdt::Matrix;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  xdt::Rng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
  return m;
}

template <bool Parallel>
void BM_LinearForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 512, 1);
  const auto w = random_matrix(512, 512, 2);
  const std::vector<double> b(512, 0.1);
  Matrix y(n, 512);
  for (auto _ : state) {
    if constexpr (Parallel) xdt::kernels::parallel::linear_forward(x, w, b, y);
    else xdt::kernels::serial::linear_forward(x, w, b, y);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 512 * 512));
}

template <bool Parallel>
void BM_LinearGrad(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 512, 3);
  const auto dy = random_matrix(n, 256, 4);
  Matrix dw(256, 512);
  std::vector<double> db(256);
  for (auto _ : state) {
    if constexpr (Parallel) xdt::kernels::parallel::linear_accumulate_grad(dy, x, dw, db);
    else xdt::kernels::serial::linear_accumulate_grad(dy, x, dw, db);
    benchmark::DoNotOptimize(dw.data.data());
  }
}

template <bool Parallel>
void BM_PairPotential(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto z = random_matrix(n, 512, 5);
  std::vector<int> classes(n);
  for (std::size_t i = 0; i < n; ++i) classes[i] = static_cast<int>(i % 2);
  std::vector<double> sums(n);
  Matrix dz(n, 512);
  for (auto _ : state) {
    if constexpr (Parallel) {
      xdt::kernels::parallel::pair_potential(z, classes, xdt::PairPotential::log_distance, 1e-8,
                                             1.0, sums, &dz);
    } else {
      xdt::kernels::serial::pair_potential(z, classes, xdt::PairPotential::log_distance, 1e-8, 1.0,
                                           sums, &dz);
    }
    benchmark::DoNotOptimize(dz.data.data());
  }
}

}  // namespace

BENCHMARK(BM_LinearForward<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_LinearForward<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_LinearGrad<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_LinearGrad<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_PairPotential<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_PairPotential<true>)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
