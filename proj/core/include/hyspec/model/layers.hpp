#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hyspec/numerics/ops.hpp"

namespace hyspec::model {

using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

enum class ParamRole {
  kBase,   // frozen in PEFT mode
  kLoraA,  // adapter down-projection
  kLoraB,  // adapter up-projection
};

template <typename T>
struct ParamEntry {
  std::string name;
  Var<T> var;
  ParamRole role = ParamRole::kBase;
};

template <typename T>
struct BufferEntry {
  std::string name;
  std::shared_ptr<numerics::BatchNormState<T>> state;
};

// Flat, ordered view of every learnable tensor and running statistic.
template <typename T>
class Registry {
 public:
  void param(std::string name, const Var<T>& v, ParamRole role = ParamRole::kBase) {
    params_.push_back({std::move(name), v, role});
  }
  void buffer(std::string name, std::shared_ptr<numerics::BatchNormState<T>> s) {
    buffers_.push_back({std::move(name), std::move(s)});
  }
  std::vector<ParamEntry<T>>& params() { return params_; }
  const std::vector<ParamEntry<T>>& params() const { return params_; }
  const std::vector<BufferEntry<T>>& buffers() const { return buffers_; }

 private:
  std::vector<ParamEntry<T>> params_;
  std::vector<BufferEntry<T>> buffers_;
};

// Per-call forward state. Randomness is drawn only from `rng` and only in
// train mode.
struct ForwardContext {
  bool train = false;
  std::mt19937_64* rng = nullptr;
  std::vector<std::pair<std::string, Shape>>* trace = nullptr;

  void record(const std::string& what, const Shape& s) const {
    if (trace) trace->emplace_back(what, s);
  }
};

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  template <typename T>
  Tensor<T> uniform(Shape s, double bound) {
    Tensor<T> t(std::move(s));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : t.vec()) v = static_cast<T>(d(rng_));
    return t;
  }
  template <typename T>
  Tensor<T> normal(Shape s, double stddev) {
    Tensor<T> t(std::move(s));
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& v : t.vec()) v = static_cast<T>(d(rng_));
    return t;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// y = x W + b over the last axis. W: [in, out].
template <typename T>
struct Linear {
  Var<T> weight;
  Var<T> bias;
  std::int64_t in = 0, out = 0;

  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features, Initializer& init, bool zero_bias = false);
  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, Registry<T>& r) const;
};

// Frozen base map plus a rank-r adapter:
//   y = x W + b + s * dropout(x A) B,   s = (alpha / r) * gamma.
template <typename T>
struct LoraLinear {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [out]
  Var<T> lora_a;  // [in, r]
  Var<T> lora_b;  // [r, out]
  std::int64_t in = 0, out = 0, rank = 0;
  double alpha = 1.0;
  double dropout = 0.0;
  double gamma = 1.0;  // cyclical multiplier, set externally
  bool merged = false;

  LoraLinear() = default;
  LoraLinear(std::int64_t in_features, std::int64_t out_features, std::int64_t r, double lora_alpha,
             double lora_dropout, Initializer& init);
  bool has_adapter() const { return rank > 0; }
  double scale() const { return rank > 0 ? alpha / static_cast<double>(rank) * gamma : 0.0; }
  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) const;
  // W += (alpha / r) * A B (gamma = 1), then A, B = 0. Throws ContractError
  // on a second merge.
  void merge();
  void collect(const std::string& prefix, Registry<T>& r) const;
};

template <typename T>
struct LayerNorm {
  Var<T> gamma, beta;
  LayerNorm() = default;
  explicit LayerNorm(std::int64_t features);
  Var<T> forward(const Var<T>& x) const { return numerics::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, Registry<T>& r) const;
};

template <typename T>
struct BatchNorm {
  Var<T> gamma, beta;
  std::shared_ptr<numerics::BatchNormState<T>> state;
  BatchNorm() = default;
  explicit BatchNorm(std::int64_t channels);
  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) const {
    return numerics::batch_norm(x, gamma, beta, *state, ctx.train);
  }
  void collect(const std::string& prefix, Registry<T>& r) const;
};

template <typename T>
struct Conv {
  Var<T> weight, bias;
  numerics::ConvSpec spec;
  Conv() = default;
  // kernel: per spatial axis extents; fan-in scaled uniform init.
  Conv(std::int64_t cin, std::int64_t cout, std::vector<std::int64_t> kernel, numerics::ConvSpec s,
       Initializer& init);
  Var<T> forward(const Var<T>& x) const { return numerics::conv(x, weight, bias, spec); }
  void collect(const std::string& prefix, Registry<T>& r) const;
};

// Elementwise inverted dropout; identity in eval mode or when p == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, const ForwardContext& ctx);

// Spectral-channel dropout on x: [B, C, ...]. One Bernoulli(1 - p) mask over
// the C channels, shared by the batch, survivors scaled by 1 / (1 - p).
template <typename T>
Var<T> band_dropout(const Var<T>& x, double p, const ForwardContext& ctx);

// Stochastic depth: drops the whole branch per sample (axis 0).
template <typename T>
Var<T> drop_path(const Var<T>& x, double rate, const ForwardContext& ctx);

}  // namespace hyspec::model
