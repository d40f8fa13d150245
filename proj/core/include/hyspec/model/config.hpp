#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hyspec::model {

// Architecture hyperparameters. Defaults reproduce the reference
// configuration: 15 principal components, 15x15 patches, three stages.
struct ModelConfig {
  std::int64_t in_bands = 15;  // principal components k
  std::int64_t patch = 15;     // spatial patch size p
  std::int64_t dim = 96;
  std::vector<std::int64_t> depths{3, 4, 19};
  std::vector<std::int64_t> heads{4, 8, 16};
  std::int64_t window = 7;
  std::int64_t lora_rank = 16;  // 0 disables the adapters entirely
  double lora_alpha = 32.0;
  double lora_dropout = 0.05;
  double drop_path = 0.2;
  double band_drop = 0.1;
  double pos_drop = 0.1;
  std::int64_t ffn_ratio = 4;
  std::int64_t num_classes = 9;

  // Fixed channel path of the spectral 3D-conv stack before the last layer.
  static constexpr std::int64_t kSpectralC1 = 32;
  static constexpr std::int64_t kSpectralC2 = 64;

  // Throws ConfigError naming the offending field.
  void validate() const;

  std::int64_t total_blocks() const;
  std::int64_t stage_dim(std::size_t stage) const { return dim << stage; }
  // Spectral depth after the unpadded (7, 5, 3) kernel stack.
  std::int64_t spectral_depth() const { return in_bands - 12; }
  // Token grid side after the 4x4 stride-2 pad-1 patch embedding.
  std::int64_t token_grid() const { return (patch + 2 - 4) / 2 + 1; }
};

}  // namespace hyspec::model
