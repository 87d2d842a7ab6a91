// Parallel kernels against the serial reference on backbone-shaped layers.

#include <vector>

#include <benchmark/benchmark.h>

#include "relvid/kernels.hpp"
#include "relvid/rng.hpp"

using namespace relvid;
using kernels::Conv3dGeometry;

namespace {

// Tiny-preset stages at 16x112x112 input.
Conv3dGeometry stage(int i) {
  switch (i) {
    case 1: return {3, 8, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, {16, 112, 112}};
    case 2: return {8, 16, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, {16, 56, 56}};
    case 3: return {16, 32, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, {8, 28, 28}};
    case 4: return {32, 64, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, {4, 14, 14}};
    default: return {64, 64, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, {2, 7, 7}};
  }
}

struct Buffers {
  std::vector<float> in, weight, out;
  explicit Buffers(const Conv3dGeometry& g) {
    Rng rng(1);
    in.resize(g.in_volume() * g.in_channels);
    weight.resize(g.weight_size());
    out.resize(g.out_volume() * g.out_channels);
    for (auto& v : in) v = static_cast<float>(standard_normal(rng));
    for (auto& v : weight) v = static_cast<float>(standard_normal(rng));
    for (auto& v : out) v = static_cast<float>(standard_normal(rng));
  }
};

void set_rate(benchmark::State& state, const Conv3dGeometry& g) {
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(g.out_volume() * g.weight_size()),
                                               benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_Forward(benchmark::State& state) {
  const auto g = stage(static_cast<int>(state.range(0)));
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv3d_forward<float>(g, 1, b.in.data(), b.weight.data(), b.out.data());
    else kernels::reference::conv3d_forward<float>(g, 1, b.in.data(), b.weight.data(), b.out.data());
    benchmark::DoNotOptimize(b.out.data());
  }
  set_rate(state, g);
}

template <bool Parallel>
void BM_BackwardData(benchmark::State& state) {
  const auto g = stage(static_cast<int>(state.range(0)));
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv3d_backward_data<float>(g, 1, b.out.data(), b.weight.data(), b.in.data());
    else kernels::reference::conv3d_backward_data<float>(g, 1, b.out.data(), b.weight.data(), b.in.data());
    benchmark::DoNotOptimize(b.in.data());
  }
  set_rate(state, g);
}

template <bool Parallel>
void BM_BackwardWeight(benchmark::State& state) {
  const auto g = stage(static_cast<int>(state.range(0)));
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv3d_backward_weight<float>(g, 1, b.in.data(), b.out.data(), b.weight.data());
    else kernels::reference::conv3d_backward_weight<float>(g, 1, b.in.data(), b.out.data(), b.weight.data());
    benchmark::DoNotOptimize(b.weight.data());
  }
  set_rate(state, g);
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::vector<float> a(static_cast<std::size_t>(n) * n, 1.0f), b(a), c(a.size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm_accumulate<float>(n, n, n, a.data(), n, b.data(), n, c.data(), n);
    else kernels::reference::gemm_accumulate<float>(n, n, n, a.data(), n, b.data(), n, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] =
      benchmark::Counter(static_cast<double>(n) * n * n, benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(BM_Forward<true>)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward<false>)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardData<true>)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardData<false>)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardWeight<true>)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardWeight<false>)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->RangeMultiplier(2)->Range(64, 256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<false>)->RangeMultiplier(2)->Range(64, 256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
