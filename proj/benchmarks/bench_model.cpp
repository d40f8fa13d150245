#include <benchmark/benchmark.h>

#include <random>

#include "hyspec/model/model.hpp"

namespace lm = hyspec::model;
namespace ln = hyspec::numerics;

namespace {

lm::ModelConfig tiny() {
  lm::ModelConfig c;
  c.dim = 16;
  c.depths = {1, 1, 2};
  c.heads = {2, 2, 4};
  c.window = 4;
  c.patch = 9;
  c.lora_rank = 4;
  c.lora_alpha = 8;
  c.num_classes = 6;
  return c;
}

ln::Tensor<float> patches(std::int64_t b, std::int64_t k, std::int64_t p) {
  ln::Tensor<float> t(ln::Shape{b, k, p, p});
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d;
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

void BM_BlockForward(benchmark::State& state) {
  const std::int64_t dim = state.range(0);
  lm::ModelConfig cfg;
  lm::Initializer init(1);
  const lm::GcVitBlock<float> block(dim, dim / 24, 0.0, cfg, init);
  ln::Tensor<float> x(ln::Shape{8, 7, 7, dim}, 0.5f);
  const auto xv = ln::Var<float>::constant(x);
  ln::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(block.forward(xv, lm::ForwardContext{}).value().data());
}
BENCHMARK(BM_BlockForward)->Arg(96)->Arg(192)->Unit(benchmark::kMillisecond);

void BM_TinyTrainStep(benchmark::State& state) {
  lm::SpectralViT<float> m(tiny(), 1);
  m.set_training(true);
  const auto x = ln::Var<float>::constant(patches(32, 15, 9));
  std::vector<std::int64_t> y(32);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int64_t>(i % 6);
  std::mt19937_64 rng(2);
  for (auto _ : state) {
    ln::backward(ln::cross_entropy(m.forward(x, &rng), y));
    for (auto& e : m.registry().params()) e.var.zero_grad();
  }
}
BENCHMARK(BM_TinyTrainStep)->Unit(benchmark::kMillisecond);

void BM_ReferenceInference(benchmark::State& state) {
  const lm::SpectralViT<float> m(lm::ModelConfig{}, 1);
  const auto x = ln::Var<float>::constant(patches(state.range(0), 15, 15));
  ln::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x).value().data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ReferenceInference)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
