#include "hyspec/model/layers.hpp"

#include <cmath>

#include "hyspec/numerics/gemm.hpp"

namespace hyspec::model {

using numerics::add;
using numerics::broadcast_to;
using numerics::matmul;
using numerics::mul;

template <typename T>
Linear<T>::Linear(std::int64_t in_features, std::int64_t out_features, Initializer& init, bool zero_bias)
    : in(in_features), out(out_features) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = Var<T>::leaf(init.uniform<T>({in, out}, bound));
  bias = Var<T>::leaf(zero_bias ? Tensor<T>(Shape{out}) : init.uniform<T>({out}, bound));
}

template <typename T>
Var<T> Linear<T>::forward(const Var<T>& x) const {
  if (x.shape().back() != in) {
    throw DimensionError("linear: input " + numerics::shape_str(x.shape()) + " needs last extent " +
                         std::to_string(in));
  }
  const Var<T> y = matmul(x.shape().size() == 1 ? numerics::reshape(x, {1, in}) : x, weight);
  const Var<T> out_v = add(y, broadcast_to(bias, y.shape()));
  return x.shape().size() == 1 ? numerics::reshape(out_v, {out}) : out_v;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, Registry<T>& r) const {
  r.param(prefix + ".weight", weight);
  r.param(prefix + ".bias", bias);
}

template <typename T>
LoraLinear<T>::LoraLinear(std::int64_t in_features, std::int64_t out_features, std::int64_t r, double lora_alpha,
                          double lora_dropout, Initializer& init)
    : in(in_features), out(out_features), rank(r), alpha(lora_alpha), dropout(lora_dropout) {
  if (r < 0) throw ConfigError("lora: rank must be non-negative");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw ConfigError("lora: dropout must lie in [0, 1)");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = Var<T>::leaf(init.uniform<T>({in, out}, bound));
  bias = Var<T>::leaf(init.uniform<T>({out}, bound));
  if (r > 0) {
    if (r >= std::min(in, out)) {
      warn("lora-rank", "LoRA rank " + std::to_string(r) + " >= min(" + std::to_string(in) + ", " +
                            std::to_string(out) + "); the update is not low-rank");
    }
    lora_a = Var<T>::leaf(init.normal<T>({in, r}, 1.0 / std::sqrt(static_cast<double>(in))));
    lora_b = Var<T>::leaf(Tensor<T>(Shape{r, out}));
  }
}

template <typename T>
Var<T> LoraLinear<T>::forward(const Var<T>& x, const ForwardContext& ctx) const {
  if (x.shape().back() != in) {
    throw DimensionError("lora_linear: input " + numerics::shape_str(x.shape()) + " needs last extent " +
                         std::to_string(in));
  }
  Var<T> y = matmul(x, weight);
  y = add(y, broadcast_to(bias, y.shape()));
  if (!has_adapter() || merged) return y;
  const Var<T> h = model::dropout(matmul(x, lora_a), dropout, ctx);
  const Var<T> delta = numerics::scale(matmul(h, lora_b), static_cast<T>(scale()));
  return add(y, delta);
}

template <typename T>
void LoraLinear<T>::merge() {
  if (merged) throw ContractError("lora: adapter already merged");
  merged = true;
  if (!has_adapter()) return;
  Tensor<T> ab(Shape{in, out});
  numerics::gemm<T>(false, false, in, out, rank, lora_a.value().data(), lora_b.value().data(), ab.data(), false);
  const T s = static_cast<T>(alpha / static_cast<double>(rank));
  auto& w = weight.mutable_value();
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] += s * ab[i];
  lora_a.mutable_value().fill(T(0));
  lora_b.mutable_value().fill(T(0));
}

template <typename T>
void LoraLinear<T>::collect(const std::string& prefix, Registry<T>& r) const {
  r.param(prefix + ".weight", weight);
  r.param(prefix + ".bias", bias);
  if (has_adapter()) {
    r.param(prefix + ".lora_a", lora_a, ParamRole::kLoraA);
    r.param(prefix + ".lora_b", lora_b, ParamRole::kLoraB);
  }
}

template <typename T>
LayerNorm<T>::LayerNorm(std::int64_t features)
    : gamma(Var<T>::leaf(Tensor<T>(Shape{features}, T(1)))), beta(Var<T>::leaf(Tensor<T>(Shape{features}))) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, Registry<T>& r) const {
  r.param(prefix + ".gamma", gamma);
  r.param(prefix + ".beta", beta);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::int64_t channels)
    : gamma(Var<T>::leaf(Tensor<T>(Shape{channels}, T(1)))),
      beta(Var<T>::leaf(Tensor<T>(Shape{channels}))),
      state(std::make_shared<numerics::BatchNormState<T>>(channels)) {}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, Registry<T>& r) const {
  r.param(prefix + ".gamma", gamma);
  r.param(prefix + ".beta", beta);
  r.buffer(prefix, state);
}

template <typename T>
Conv<T>::Conv(std::int64_t cin, std::int64_t cout, std::vector<std::int64_t> kernel, numerics::ConvSpec s,
              Initializer& init)
    : spec(std::move(s)) {
  if (cin % spec.groups != 0) throw ConfigError("conv: groups must divide input channels");
  Shape ws{cout, cin / spec.groups};
  std::int64_t fan_in = cin / spec.groups;
  for (auto k : kernel) {
    ws.push_back(k);
    fan_in *= k;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight = Var<T>::leaf(init.uniform<T>(ws, bound));
  bias = Var<T>::leaf(init.uniform<T>({cout}, bound));
}

template <typename T>
void Conv<T>::collect(const std::string& prefix, Registry<T>& r) const {
  r.param(prefix + ".weight", weight);
  r.param(prefix + ".bias", bias);
}

namespace {
void require_rng(const ForwardContext& ctx, const char* what) {
  if (!ctx.rng) throw ContractError(std::string(what) + ": train mode needs an rng");
}
}  // namespace

template <typename T>
Var<T> dropout(const Var<T>& x, double p, const ForwardContext& ctx) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must lie in [0, 1)");
  if (!ctx.train || p == 0.0) return x;
  require_rng(ctx, "dropout");
  std::bernoulli_distribution keep(1.0 - p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  for (auto& v : mask.vec()) v = keep(*ctx.rng) ? s : T(0);
  return mul(x, Var<T>::constant(std::move(mask)));
}

template <typename T>
Var<T> band_dropout(const Var<T>& x, double p, const ForwardContext& ctx) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("band_dropout: probability must lie in [0, 1)");
  if (!ctx.train || p == 0.0) return x;
  require_rng(ctx, "band_dropout");
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("band_dropout: expected [B, C, ...]");
  std::bernoulli_distribution keep(1.0 - p);
  const T sc = static_cast<T>(1.0 / (1.0 - p));
  Shape ms(s.size(), 1);
  ms[1] = s[1];
  Tensor<T> mask(ms);
  for (auto& v : mask.vec()) v = keep(*ctx.rng) ? sc : T(0);
  return mul(x, broadcast_to(Var<T>::constant(std::move(mask)), s));
}

template <typename T>
Var<T> drop_path(const Var<T>& x, double rate, const ForwardContext& ctx) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("drop_path: rate must lie in [0, 1)");
  if (!ctx.train || rate == 0.0) return x;
  require_rng(ctx, "drop_path");
  const Shape& s = x.shape();
  std::bernoulli_distribution keep(1.0 - rate);
  const T sc = static_cast<T>(1.0 / (1.0 - rate));
  Shape ms(s.size(), 1);
  ms[0] = s[0];
  Tensor<T> mask(ms);
  for (auto& v : mask.vec()) v = keep(*ctx.rng) ? sc : T(0);
  return mul(x, broadcast_to(Var<T>::constant(std::move(mask)), s));
}

#define HYSPEC_INSTANTIATE_LAYERS(T)                                           \
  template struct Linear<T>;                                                     \
  template struct LoraLinear<T>;                                                 \
  template struct LayerNorm<T>;                                                  \
  template struct BatchNorm<T>;                                                  \
  template struct Conv<T>;                                                       \
  template Var<T> dropout<T>(const Var<T>&, double, const ForwardContext&);      \
  template Var<T> band_dropout<T>(const Var<T>&, double, const ForwardContext&); \
  template Var<T> drop_path<T>(const Var<T>&, double, const ForwardContext&);

HYSPEC_INSTANTIATE_LAYERS(float)
HYSPEC_INSTANTIATE_LAYERS(double)

}  // namespace hyspec::model
