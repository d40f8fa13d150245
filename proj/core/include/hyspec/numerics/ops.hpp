#pragma once

// Differentiable operation set used by the model. Every op validates shapes
// and throws DimensionError/ShapeError rather than broadcasting implicitly;
// broadcast_to is the only way to expand extents.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hyspec/numerics/autodiff.hpp"

namespace hyspec::numerics {

using Axes = std::vector<std::int64_t>;

// a[..., m, k] x b[..., k, n]. Leading extents must be equal when present;
// a rank-2 `b` is shared across all leading batches of `a`.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T c);

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

// Numpy-style expansion: `a` is right-aligned against `shape`, each of its
// extents must equal the target extent or be 1.
template <typename T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape);

template <typename T>
Var<T> reshape(const Var<T>& a, const Shape& shape);
template <typename T>
Var<T> permute(const Var<T>& a, const Axes& order);
template <typename T>
Var<T> slice(const Var<T>& a, std::int64_t axis, std::int64_t start, std::int64_t length);
// Zero padding, one (before, after) pair per axis.
template <typename T>
Var<T> pad(const Var<T>& a, const std::vector<std::pair<std::int64_t, std::int64_t>>& widths);

struct ConvSpec {
  int dims = 2;  // 2 or 3 spatial axes
  std::vector<std::int64_t> stride;  // per spatial axis; empty = all 1
  std::vector<std::int64_t> padding;  // per spatial axis; empty = all 0
  std::int64_t groups = 1;
};

// Cross-correlation. x: [B, Cin, spatial...], w: [Cout, Cin/groups, k...],
// bias: [Cout] or an invalid Var for none.
template <typename T>
Var<T> conv(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvSpec& spec);

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad);

enum class Activation { kSwish, kSigmoid };

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind);
template <typename T>
Var<T> swish(const Var<T>& x) { return activation(x, Activation::kSwish); }
template <typename T>
Var<T> sigmoid(const Var<T>& x) { return activation(x, Activation::kSigmoid); }
template <typename T>
Var<T> softmax(const Var<T>& x, std::int64_t axis);

enum class Reduction { kSum, kMean };

// Removes the reduced axes from the output shape; reducing every axis yields
// shape [1].
template <typename T>
Var<T> reduce(const Var<T>& x, Reduction kind, const Axes& axes);
template <typename T>
Var<T> sum(const Var<T>& x, const Axes& axes) { return reduce(x, Reduction::kSum, axes); }
template <typename T>
Var<T> mean(const Var<T>& x, const Axes& axes) { return reduce(x, Reduction::kMean, axes); }
template <typename T>
Var<T> sum_all(const Var<T>& x);

// table[R, C] -> out[n, C] with out[i] = table[idx[i]].
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int64_t> idx);

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Normalizes over the last axis, then gamma/beta of shape [features].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = kNormEps);

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = kBatchNormMomentum;
  double eps = kNormEps;

  explicit BatchNormState(std::int64_t channels = 1)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

// x: [B, C, spatial...]; statistics per channel over batch and spatial axes.
// Train mode uses batch statistics (batch >= 2) and updates the running
// estimates; eval mode uses the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                  bool train);

// Mean over the batch of -log softmax(logits)[target]. logits: [B, K].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int64_t> targets);

}  // namespace hyspec::numerics
