// OpenMP kernels against the serial loop-for-loop reference.
//   ./bench_kernels --benchmark_filter=Gemm
// Thread count is the second argument of the OpenMP cases (0 = runtime default).
#include <benchmark/benchmark.h>

#include <vector>

#include "reference.hpp"
#include "thinsec/kernels.hpp"
#include "thinsec/ops.hpp"
#include "thinsec/rng.hpp"

using namespace thinsec;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

void GemmReference(benchmark::State& state) {
  const auto n = state.range(0);
  const auto a = random_values(static_cast<std::size_t>(n * n), 1), b = random_values(static_cast<std::size_t>(n * n), 2);
  for (auto _ : state) benchmark::DoNotOptimize(reference::matmul(a, b, n, n, n));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void GemmOpenMP(benchmark::State& state) {
  const auto n = state.range(0);
  kernels::set_threads(static_cast<int>(state.range(1)));
  const auto a = random_values(static_cast<std::size_t>(n * n), 1), b = random_values(static_cast<std::size_t>(n * n), 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    kernels::gemm(false, false, n, n, n, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
  kernels::set_threads(0);
}

// One ResNet stage-shaped convolution: C -> C channels, 3x3, stride 1, pad 1.
struct ConvCase {
  std::int64_t channels, size;
};

void ConvReference(benchmark::State& state) {
  const ConvCase k{state.range(0), state.range(1)};
  const auto x = random_values(static_cast<std::size_t>(k.channels * k.size * k.size), 3);
  const auto w = random_values(static_cast<std::size_t>(k.channels * k.channels * 9), 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        reference::conv2d(x, w, {}, 1, k.channels, k.size, k.size, k.channels, 3, 3, 1, 1, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * 2 * k.channels * k.channels * 9 * k.size * k.size);
}

void ConvOpenMP(benchmark::State& state) {
  const ConvCase k{state.range(0), state.range(1)};
  kernels::set_threads(static_cast<int>(state.range(2)));
  const Tensor x = Tensor::from({1, k.channels, k.size, k.size},
                                random_values(static_cast<std::size_t>(k.channels * k.size * k.size), 3));
  const Tensor w = Tensor::from({k.channels, k.channels, 3, 3},
                                random_values(static_cast<std::size_t>(k.channels * k.channels * 9), 4));
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, {}, {1, 1}, {1, 1}));
  state.SetItemsProcessed(state.iterations() * 2 * k.channels * k.channels * 9 * k.size * k.size);
  kernels::set_threads(0);
}

}  // namespace

BENCHMARK(GemmReference)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(GemmOpenMP)->ArgsProduct({{64, 256}, {1, 0}})->Unit(benchmark::kMillisecond);
BENCHMARK(ConvReference)->Args({16, 56})->Args({64, 28})->Unit(benchmark::kMillisecond);
BENCHMARK(ConvOpenMP)->Args({16, 56, 1})->Args({64, 28, 1})->Args({16, 56, 0})->Args({64, 28, 0})->Unit(
    benchmark::kMillisecond);

BENCHMARK_MAIN();
