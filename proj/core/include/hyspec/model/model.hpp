#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hyspec/model/backbone.hpp"
#include "hyspec/model/config.hpp"
#include "hyspec/model/frontend.hpp"
#include "hyspec/model/layers.hpp"

namespace hyspec::model {

using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

// Spectral front-end, windowed-attention backbone and a LoRA classifier head
// (layernorm, spatial mean, linear to K logits).
template <typename T>
class SpectralViT {
 public:
  SpectralViT(const ModelConfig& cfg, std::uint64_t seed);
  SpectralViT(const SpectralViT&) = delete;
  SpectralViT& operator=(const SpectralViT&) = delete;
  SpectralViT(SpectralViT&&) noexcept = default;
  SpectralViT& operator=(SpectralViT&&) noexcept = default;

  // patches: [B, k, p, p] -> logits [B, K]. Train mode needs `rng`.
  Var<T> forward(const Var<T>& patches, std::mt19937_64* rng = nullptr, ShapeTrace* trace = nullptr) const;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  const ModelConfig& config() const { return cfg_; }
  Registry<T>& registry() { return registry_; }
  const Registry<T>& registry() const { return registry_; }

  std::vector<LoraLinear<T>*> lora_layers();
  std::vector<const LoraLinear<T>*> lora_layers() const;

  SpectralFrontend<T>& frontend() { return frontend_; }
  Backbone<T>& backbone() { return backbone_; }
  LoraLinear<T>& head() { return head_; }

  // Copies every parameter and running statistic whose name and shape also
  // exist in `other`; returns the number of tensors copied.
  std::size_t copy_from(const SpectralViT& other);

 private:
  void rebuild_registry();

  ModelConfig cfg_;
  bool training_ = false;
  SpectralFrontend<T> frontend_;
  Backbone<T> backbone_;
  LayerNorm<T> head_norm_;
  LoraLinear<T> head_;
  Registry<T> registry_;
};

}  // namespace hyspec::model
