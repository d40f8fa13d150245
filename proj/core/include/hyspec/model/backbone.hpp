#pragma once

#include <optional>

#include "hyspec/model/config.hpp"
#include "hyspec/model/layers.hpp"

namespace hyspec::model {

// Result of splitting a [B, H, W, C] map into M x M windows. When H or W is
// not a multiple of M the map is zero-padded first; `valid` marks real
// (non-padding) tokens per window.
template <typename T>
struct Windows {
  Var<T> tokens;  // [B * nh * nw, M * M, C]
  std::int64_t batch = 0, height = 0, width = 0, window = 0;
  std::int64_t padded_h = 0, padded_w = 0;
  std::vector<std::uint8_t> valid;  // [nh * nw, M * M]; empty when unpadded

  std::int64_t windows_per_image() const { return (padded_h / window) * (padded_w / window); }
  bool padded() const { return padded_h != height || padded_w != width; }
};

template <typename T>
Windows<T> window_partition(const Var<T>& x, std::int64_t window);

// Inverse of window_partition (crops any padding). `windows` is
// [B * nh * nw, M * M, C] laid out as produced by window_partition.
template <typename T>
Var<T> window_reverse(const Var<T>& windows, std::int64_t window, std::int64_t batch, std::int64_t height,
                      std::int64_t width);

// Index map for a (2M - 1)^2 relative position table: entry (i, j) of the
// M^2 x M^2 matrix selects the row for offset (r_i - r_j, c_i - c_j).
std::vector<std::int64_t> relative_position_index(std::int64_t window);

template <typename T>
struct RelPosBias {
  Var<T> table;  // [(2M - 1)^2, heads]
  std::vector<std::int64_t> index;
  std::int64_t window = 0, heads = 0;

  RelPosBias() = default;
  RelPosBias(std::int64_t window_size, std::int64_t num_heads, Initializer& init);
  // [heads, M^2, M^2]
  Var<T> matrix() const;
};

template <typename T>
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(std::int64_t dim, std::int64_t heads, std::int64_t window, const ModelConfig& cfg,
                  Initializer& init);

  // windows: [Bw, M^2, C]. `valid` (see Windows) masks padded keys with
  // -inf logits. If `attn` is non-null the softmax weights
  // [Bw, heads, M^2, M^2] are copied out.
  Var<T> forward(const Var<T>& windows, const std::vector<std::uint8_t>& valid, const ForwardContext& ctx,
                 Tensor<T>* attn = nullptr) const;

  LoraLinear<T>& qkv() { return qkv_; }
  LoraLinear<T>& proj() { return proj_; }
  const LoraLinear<T>& qkv() const { return qkv_; }
  const LoraLinear<T>& proj() const { return proj_; }
  RelPosBias<T>& bias() { return bias_; }
  std::int64_t heads() const { return heads_; }
  void collect(const std::string& prefix, Registry<T>& r) const;

 private:
  std::int64_t dim_ = 0, heads_ = 0, window_ = 0;
  LoraLinear<T> qkv_, proj_;
  RelPosBias<T> bias_;
};

template <typename T>
struct SwiGlu {
  Linear<T> w1, w2, w3;
  SwiGlu() = default;
  SwiGlu(std::int64_t dim, std::int64_t hidden, Initializer& init);
  // (swish(x W1) * (x W2)) W3, biases on all three maps.
  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, Registry<T>& r) const;
};

// Pre-norm windowed-attention block with recharge residuals:
//   y1 = g_a * x + b_a + droppath(attn(ln1(x)))
//   y  = g_f * y1 + b_f + droppath(swiglu(ln2(y1)))
template <typename T>
class GcVitBlock {
 public:
  GcVitBlock() = default;
  GcVitBlock(std::int64_t dim, std::int64_t heads, double drop_path, const ModelConfig& cfg, Initializer& init);

  Var<T> forward(const Var<T>& x, const ForwardContext& ctx) const;

  WindowAttention<T>& attention() { return attn_; }
  const WindowAttention<T>& attention() const { return attn_; }
  SwiGlu<T>& ffn() { return ffn_; }
  LayerNorm<T>& norm1() { return ln1_; }
  LayerNorm<T>& norm2() { return ln2_; }
  double drop_path_rate() const { return drop_path_; }
  Var<T> gamma_attn, beta_attn, gamma_ffn, beta_ffn;
  void collect(const std::string& prefix, Registry<T>& r) const;

 private:
  std::int64_t window_ = 0;
  double drop_path_ = 0.0;
  LayerNorm<T> ln1_, ln2_;
  WindowAttention<T> attn_;
  SwiGlu<T> ffn_;
};

// Downsampling between stages: [B, H, W, C] -> [B, ceil(H/2), ceil(W/2), 2C].
template <typename T>
class ReduceSize {
 public:
  ReduceSize() = default;
  ReduceSize(std::int64_t dim, Initializer& init);

  // When `se_gates` is non-null the squeeze-excitation gates [B, C] are
  // copied out.
  Var<T> forward(const Var<T>& x, const ForwardContext& ctx, Tensor<T>* se_gates = nullptr) const;

  Conv<T>& depthwise() { return dw_; }
  void collect(const std::string& prefix, Registry<T>& r) const;

 private:
  std::int64_t dim_ = 0;
  Conv<T> dw_;
  Linear<T> se1_, se2_;
  Conv<T> pw_;
  BatchNorm<T> bn_;
  Conv<T> down_;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const ModelConfig& cfg, Initializer& init);

  // Stage l runs depths[l] blocks; ReduceSize follows every stage but the last.
  Var<T> forward(const Var<T>& tokens, const ForwardContext& ctx) const;

  std::size_t stages() const { return blocks_.size(); }
  std::vector<GcVitBlock<T>>& blocks(std::size_t stage) { return blocks_[stage]; }
  const std::vector<GcVitBlock<T>>& blocks(std::size_t stage) const { return blocks_[stage]; }
  ReduceSize<T>& reduction(std::size_t stage) { return reduces_[stage]; }
  void collect(const std::string& prefix, Registry<T>& r) const;

 private:
  std::vector<std::vector<GcVitBlock<T>>> blocks_;
  std::vector<ReduceSize<T>> reduces_;
};

}  // namespace hyspec::model
