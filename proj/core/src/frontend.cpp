#include "hyspec/model/frontend.hpp"

namespace hyspec::model {

using namespace numerics;

template <typename T>
SpectralFrontend<T>::SpectralFrontend(const ModelConfig& cfg, Initializer& init) : cfg_(cfg) {
  constexpr auto c1 = ModelConfig::kSpectralC1;
  constexpr auto c2 = ModelConfig::kSpectralC2;
  const ConvSpec spectral{3, {1, 1, 1}, {0, 1, 1}, 1};
  conv1_ = Conv<T>(1, c1, {7, 3, 3}, spectral, init);
  bn1_ = BatchNorm<T>(c1);
  conv2_ = Conv<T>(c1, c2, {5, 3, 3}, spectral, init);
  bn2_ = BatchNorm<T>(c2);
  conv3_ = Conv<T>(c2, cfg.dim, {3, 3, 3}, spectral, init);
  bn3_ = BatchNorm<T>(cfg.dim);
  const std::int64_t r = cfg.dim / 4;
  if (r < 1) throw ConfigError("model.dim must be at least 4 for the spectral attention bottleneck");
  att1_ = Linear<T>(cfg.dim, r, init, /*zero_bias=*/true);
  att2_ = Linear<T>(r, cfg.dim, init, /*zero_bias=*/true);
  embed_ = Conv<T>(cfg.dim, cfg.dim, {4, 4}, ConvSpec{2, {2, 2}, {1, 1}, 1}, init);
  embed_bn_ = BatchNorm<T>(cfg.dim);
  const std::int64_t g = cfg.token_grid();
  pos_ = Var<T>::leaf(init.normal<T>({g, g, cfg.dim}, 0.02));
}

template <typename T>
Var<T> SpectralFrontend<T>::spectral_conv_stack(const Var<T>& x, const ForwardContext& ctx) const {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != 1) throw DimensionError("spectral stack expects [B, 1, k, p, p], got " + shape_str(s));
  if (s[2] < 13) {
    throw ConfigError("spectral stack needs k >= 13 spectral components for the (7, 5, 3) kernel stack, got " +
                      std::to_string(s[2]));
  }
  Var<T> h = swish(bn1_.forward(conv1_.forward(x), ctx));
  h = swish(bn2_.forward(conv2_.forward(h), ctx));
  return swish(bn3_.forward(conv3_.forward(h), ctx));
}

template <typename T>
Var<T> SpectralFrontend<T>::spectral_attention(const Var<T>& x, Tensor<T>* weights) const {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != cfg_.dim) {
    throw DimensionError("spectral attention expects [B, " + std::to_string(cfg_.dim) + ", D, H, W], got " +
                         shape_str(s));
  }
  const Var<T> z = mean(x, {2, 3, 4});  // [B, C]
  const Var<T> a = sigmoid(att2_.forward(swish(att1_.forward(z))));
  if (weights) *weights = a.value();
  return mul(x, broadcast_to(reshape(a, {s[0], s[1], 1, 1, 1}), s));
}

template <typename T>
Var<T> SpectralFrontend<T>::pool_and_embed(const Var<T>& x, const ForwardContext& ctx) const {
  const Shape& s = x.shape();
  if (s.size() != 5) throw DimensionError("pool_and_embed expects [B, C, D, H, W], got " + shape_str(s));
  if (s[3] < 4 || s[4] < 4) throw ShapeError("pool_and_embed needs H, W >= 4, got " + shape_str(s));
  const Var<T> spatial = mean(x, {2});  // [B, C, H, W]
  const Var<T> e = swish(embed_bn_.forward(embed_.forward(spatial), ctx));
  Var<T> tokens = permute(e, {0, 2, 3, 1});  // [B, H', W', dim]
  if (tokens.shape()[1] != pos_.shape()[0] || tokens.shape()[2] != pos_.shape()[1]) {
    throw ShapeError("token grid " + shape_str(tokens.shape()) + " does not match positional encoding " +
                     shape_str(pos_.shape()));
  }
  tokens = add(tokens, broadcast_to(pos_, tokens.shape()));
  return dropout(tokens, cfg_.pos_drop, ctx);
}

template <typename T>
Var<T> SpectralFrontend<T>::forward(const Var<T>& patches, const ForwardContext& ctx) const {
  const Shape& s = patches.shape();
  if (s.size() != 4) throw DimensionError("front-end expects [B, k, p, p], got " + shape_str(s));
  const Var<T> x = reshape(patches, {s[0], 1, s[1], s[2], s[3]});
  Var<T> f = spectral_conv_stack(x, ctx);
  ctx.record("spectral", f.shape());
  f = band_dropout(f, cfg_.band_drop, ctx);
  f = spectral_attention(f);
  const Var<T> tokens = pool_and_embed(f, ctx);
  ctx.record("tokens", tokens.shape());
  return tokens;
}

template <typename T>
void SpectralFrontend<T>::collect(const std::string& prefix, Registry<T>& r) const {
  conv1_.collect(prefix + ".conv1", r);
  bn1_.collect(prefix + ".bn1", r);
  conv2_.collect(prefix + ".conv2", r);
  bn2_.collect(prefix + ".bn2", r);
  conv3_.collect(prefix + ".conv3", r);
  bn3_.collect(prefix + ".bn3", r);
  att1_.collect(prefix + ".spectral_att.fc1", r);
  att2_.collect(prefix + ".spectral_att.fc2", r);
  embed_.collect(prefix + ".embed", r);
  embed_bn_.collect(prefix + ".embed_bn", r);
  r.param(prefix + ".pos", pos_);
}

template class SpectralFrontend<float>;
template class SpectralFrontend<double>;

}  // namespace hyspec::model
