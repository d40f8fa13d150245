#pragma once

#include "hyspec/model/config.hpp"
#include "hyspec/model/layers.hpp"

namespace hyspec::model {

// 3D-conv spectral feature extractor followed by spectral pooling and patch
// embedding. Input [B, k, p, p] (k principal components); output tokens
// [B, H', W', dim] with H' = floor((p - 2) / 2) + 1.
template <typename T>
class SpectralFrontend {
 public:
  SpectralFrontend() = default;
  SpectralFrontend(const ModelConfig& cfg, Initializer& init);

  // [B, 1, k, p, p] -> [B, dim, k - 12, p, p]. Three rounds of
  // conv3d -> batchnorm3d -> swish; spectral axis unpadded, spatial "same".
  Var<T> spectral_conv_stack(const Var<T>& x, const ForwardContext& ctx) const;

  // z = GAP over (D, H, W); a = sigmoid(W2 swish(W1 z)); x * a.
  // When `weights` is non-null the attention weights [B, C] are copied out.
  Var<T> spectral_attention(const Var<T>& x, Tensor<T>* weights = nullptr) const;

  // Mean over D, conv2d 4x4/s2/p1 -> batchnorm2d -> swish, token layout,
  // + positional encoding, positional dropout.
  Var<T> pool_and_embed(const Var<T>& x, const ForwardContext& ctx) const;

  Var<T> forward(const Var<T>& patches, const ForwardContext& ctx) const;

  void collect(const std::string& prefix, Registry<T>& r) const;

  std::int64_t bottleneck() const { return att1_.out; }
  const Var<T>& positional() const { return pos_; }

 private:
  ModelConfig cfg_;
  Conv<T> conv1_, conv2_, conv3_;
  BatchNorm<T> bn1_, bn2_, bn3_;
  Linear<T> att1_, att2_;
  Conv<T> embed_;
  BatchNorm<T> embed_bn_;
  Var<T> pos_;  // [H', W', dim]
};

}  // namespace hyspec::model
