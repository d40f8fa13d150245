#include <benchmark/benchmark.h>

#include <random>

#include "hyspec/numerics/gemm.hpp"
#include "hyspec/numerics/ops.hpp"

namespace ln = hyspec::numerics;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ln::Var<float> constant(ln::Shape s, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(ln::shape_numel(s));
  return ln::Var<float>::constant(ln::Tensor<float>(std::move(s), noise(n, seed)));
}

void BM_Gemm(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    ln::gemm<float>(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

// The spectral stack's widest layer: 32 -> 64 channels, 5x3x3 kernel.
void BM_Conv3dForward(benchmark::State& state) {
  const auto x = constant({state.range(0), 32, 9, 9, 9}, 3);
  const auto w = constant({64, 32, 5, 3, 3}, 4);
  const ln::ConvSpec spec{3, {1, 1, 1}, {0, 1, 1}, 1};
  ln::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ln::conv(x, w, ln::Var<float>(), spec).value().data());
}
BENCHMARK(BM_Conv3dForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto xv = noise(8 * 16 * 9 * 9, 5), wv = noise(16 * 16 * 4 * 4, 6);
  for (auto _ : state) {
    const auto x = ln::Var<float>::leaf(ln::Tensor<float>(ln::Shape{8, 16, 9, 9}, xv));
    const auto w = ln::Var<float>::leaf(ln::Tensor<float>(ln::Shape{16, 16, 4, 4}, wv));
    ln::backward(ln::sum_all(ln::conv(x, w, ln::Var<float>(), {2, {2, 2}, {1, 1}, 1})));
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMicrosecond);

void BM_Softmax(benchmark::State& state) {
  const auto x = constant({64, 4, 49, 49}, 7);
  ln::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ln::softmax(x, 3).value().data());
}
BENCHMARK(BM_Softmax)->Unit(benchmark::kMicrosecond);

}  // namespace
