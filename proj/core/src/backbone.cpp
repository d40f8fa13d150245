#include "hyspec/model/backbone.hpp"

#include <cmath>
#include <limits>

namespace hyspec::model {

using namespace numerics;

template <typename T>
Windows<T> window_partition(const Var<T>& x, std::int64_t window) {
  if (window <= 0) throw ConfigError("window size must be positive, got " + std::to_string(window));
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("window_partition expects [B, H, W, C], got " + shape_str(s));
  Windows<T> w;
  w.batch = s[0];
  w.height = s[1];
  w.width = s[2];
  w.window = window;
  w.padded_h = (s[1] + window - 1) / window * window;
  w.padded_w = (s[2] + window - 1) / window * window;
  const std::int64_t c = s[3];
  Var<T> xp = x;
  if (w.padded()) xp = pad(x, {{0, 0}, {0, w.padded_h - w.height}, {0, w.padded_w - w.width}, {0, 0}});
  const std::int64_t nh = w.padded_h / window;
  const std::int64_t nw = w.padded_w / window;
  Var<T> r = reshape(xp, {w.batch, nh, window, nw, window, c});
  r = permute(r, {0, 1, 3, 2, 4, 5});
  w.tokens = reshape(r, {w.batch * nh * nw, window * window, c});
  if (w.padded()) {
    w.valid.resize(static_cast<std::size_t>(nh * nw * window * window));
    std::size_t k = 0;
    for (std::int64_t a = 0; a < nh; ++a) {
      for (std::int64_t b = 0; b < nw; ++b) {
        for (std::int64_t i = 0; i < window; ++i) {
          for (std::int64_t j = 0; j < window; ++j) {
            w.valid[k++] = (a * window + i < w.height && b * window + j < w.width) ? 1 : 0;
          }
        }
      }
    }
  }
  return w;
}

template <typename T>
Var<T> window_reverse(const Var<T>& windows, std::int64_t window, std::int64_t batch, std::int64_t height,
                      std::int64_t width) {
  if (window <= 0) throw ConfigError("window size must be positive, got " + std::to_string(window));
  const Shape& s = windows.shape();
  const std::int64_t hp = (height + window - 1) / window * window;
  const std::int64_t wp = (width + window - 1) / window * window;
  const std::int64_t nh = hp / window;
  const std::int64_t nw = wp / window;
  if (s.size() != 3 || s[0] != batch * nh * nw || s[1] != window * window) {
    throw DimensionError("window_reverse: " + shape_str(s) + " inconsistent with batch " + std::to_string(batch) +
                         ", map " + std::to_string(height) + "x" + std::to_string(width) + ", window " +
                         std::to_string(window));
  }
  const std::int64_t c = s[2];
  Var<T> r = reshape(windows, {batch, nh, nw, window, window, c});
  r = permute(r, {0, 1, 3, 2, 4, 5});
  r = reshape(r, {batch, hp, wp, c});
  if (hp != height) r = slice(r, 1, 0, height);
  if (wp != width) r = slice(r, 2, 0, width);
  return r;
}

std::vector<std::int64_t> relative_position_index(std::int64_t window) {
  const std::int64_t n = window * window;
  const std::int64_t side = 2 * window - 1;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t dr = i / window - j / window + window - 1;
      const std::int64_t dc = i % window - j % window + window - 1;
      idx[static_cast<std::size_t>(i * n + j)] = dr * side + dc;
    }
  }
  return idx;
}

template <typename T>
RelPosBias<T>::RelPosBias(std::int64_t window_size, std::int64_t num_heads, Initializer& init)
    : index(relative_position_index(window_size)), window(window_size), heads(num_heads) {
  const std::int64_t side = 2 * window_size - 1;
  table = Var<T>::leaf(init.normal<T>({side * side, num_heads}, 0.02));
}

template <typename T>
Var<T> RelPosBias<T>::matrix() const {
  const std::int64_t n = window * window;
  const Var<T> g = gather_rows(table, index);  // [n * n, heads]
  return permute(reshape(g, {n, n, heads}), {2, 0, 1});
}

template <typename T>
WindowAttention<T>::WindowAttention(std::int64_t dim, std::int64_t heads, std::int64_t window, const ModelConfig& cfg,
                                    Initializer& init)
    : dim_(dim), heads_(heads), window_(window) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention: channel dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  qkv_ = LoraLinear<T>(dim, 3 * dim, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout, init);
  proj_ = LoraLinear<T>(dim, dim, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout, init);
  bias_ = RelPosBias<T>(window, heads, init);
}

template <typename T>
Var<T> WindowAttention<T>::forward(const Var<T>& windows, const std::vector<std::uint8_t>& valid,
                                   const ForwardContext& ctx, Tensor<T>* attn) const {
  const Shape& s = windows.shape();
  const std::int64_t n = window_ * window_;
  if (s.size() != 3 || s[1] != n || s[2] != dim_) {
    throw DimensionError("window attention expects [Bw, " + std::to_string(n) + ", " + std::to_string(dim_) +
                         "], got " + shape_str(s));
  }
  const std::int64_t bw = s[0];
  const std::int64_t dh = dim_ / heads_;
  Var<T> qkv = qkv_.forward(windows, ctx);
  qkv = permute(reshape(qkv, {bw, n, 3, heads_, dh}), {2, 0, 3, 1, 4});  // [3, Bw, h, N, dh]
  const Var<T> q = scale(reshape(slice(qkv, 0, 0, 1), {bw, heads_, n, dh}), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  const Var<T> k = reshape(slice(qkv, 0, 1, 1), {bw, heads_, n, dh});
  const Var<T> v = reshape(slice(qkv, 0, 2, 1), {bw, heads_, n, dh});
  Var<T> logits = matmul(q, permute(k, {0, 1, 3, 2}));  // [Bw, h, N, N]
  const Shape ls = logits.shape();
  logits = add(logits, broadcast_to(reshape(bias_.matrix(), {1, heads_, n, n}), ls));
  if (!valid.empty()) {
    const auto per_image = static_cast<std::int64_t>(valid.size()) / n;
    if (per_image <= 0 || bw % per_image != 0) throw DimensionError("window attention: mask does not tile the batch");
    Tensor<T> mask(ls);
    const T ninf = -std::numeric_limits<T>::infinity();
    for (std::int64_t b = 0; b < bw; ++b) {
      const std::int64_t w = b % per_image;
      for (std::int64_t h = 0; h < heads_; ++h) {
        T* m = mask.data() + (b * heads_ + h) * n * n;
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t j = 0; j < n; ++j) {
            if (!valid[static_cast<std::size_t>(w * n + j)]) m[i * n + j] = ninf;
          }
        }
      }
    }
    logits = add(logits, Var<T>::constant(std::move(mask)));
  }
  const Var<T> a = softmax(logits, 3);
  if (attn) *attn = a.value();
  Var<T> out = matmul(a, v);  // [Bw, h, N, dh]
  out = reshape(permute(out, {0, 2, 1, 3}), {bw, n, dim_});
  return proj_.forward(out, ctx);
}

template <typename T>
void WindowAttention<T>::collect(const std::string& prefix, Registry<T>& r) const {
  qkv_.collect(prefix + ".qkv", r);
  proj_.collect(prefix + ".proj", r);
  r.param(prefix + ".rel_pos_table", bias_.table);
}

template <typename T>
SwiGlu<T>::SwiGlu(std::int64_t dim, std::int64_t hidden, Initializer& init)
    : w1(dim, hidden, init), w2(dim, hidden, init), w3(hidden, dim, init) {}

template <typename T>
Var<T> SwiGlu<T>::forward(const Var<T>& x) const {
  return w3.forward(mul(swish(w1.forward(x)), w2.forward(x)));
}

template <typename T>
void SwiGlu<T>::collect(const std::string& prefix, Registry<T>& r) const {
  w1.collect(prefix + ".w1", r);
  w2.collect(prefix + ".w2", r);
  w3.collect(prefix + ".w3", r);
}

template <typename T>
GcVitBlock<T>::GcVitBlock(std::int64_t dim, std::int64_t heads, double drop_path, const ModelConfig& cfg,
                          Initializer& init)
    : gamma_attn(Var<T>::leaf(Tensor<T>::scalar(T(1)))),
      beta_attn(Var<T>::leaf(Tensor<T>::scalar(T(0)))),
      gamma_ffn(Var<T>::leaf(Tensor<T>::scalar(T(1)))),
      beta_ffn(Var<T>::leaf(Tensor<T>::scalar(T(0)))),
      window_(cfg.window),
      drop_path_(drop_path),
      ln1_(dim),
      ln2_(dim),
      attn_(dim, heads, cfg.window, cfg, init),
      ffn_(dim, cfg.ffn_ratio * dim, init) {}

template <typename T>
Var<T> GcVitBlock<T>::forward(const Var<T>& x, const ForwardContext& ctx) const {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("block expects [B, H, W, C], got " + shape_str(s));
  const Windows<T> win = window_partition(ln1_.forward(x), window_);
  const Var<T> a = window_reverse(attn_.forward(win.tokens, win.valid, ctx), window_, s[0], s[1], s[2]);
  const Var<T> y1 = add(add(mul(broadcast_to(gamma_attn, s), x), broadcast_to(beta_attn, s)), drop_path(a, drop_path_, ctx));
  const Var<T> f = ffn_.forward(ln2_.forward(y1));
  return add(add(mul(broadcast_to(gamma_ffn, s), y1), broadcast_to(beta_ffn, s)), drop_path(f, drop_path_, ctx));
}

template <typename T>
void GcVitBlock<T>::collect(const std::string& prefix, Registry<T>& r) const {
  ln1_.collect(prefix + ".norm1", r);
  attn_.collect(prefix + ".attn", r);
  ln2_.collect(prefix + ".norm2", r);
  ffn_.collect(prefix + ".ffn", r);
  r.param(prefix + ".gamma_attn", gamma_attn);
  r.param(prefix + ".beta_attn", beta_attn);
  r.param(prefix + ".gamma_ffn", gamma_ffn);
  r.param(prefix + ".beta_ffn", beta_ffn);
}

template <typename T>
ReduceSize<T>::ReduceSize(std::int64_t dim, Initializer& init)
    : dim_(dim),
      dw_(dim, dim, {3, 3}, ConvSpec{2, {1, 1}, {1, 1}, dim}, init),
      se1_(dim, std::max<std::int64_t>(1, dim / 4), init),
      se2_(std::max<std::int64_t>(1, dim / 4), dim, init),
      pw_(dim, 2 * dim, {1, 1}, ConvSpec{2, {1, 1}, {0, 0}, 1}, init),
      bn_(2 * dim),
      down_(2 * dim, 2 * dim, {3, 3}, ConvSpec{2, {2, 2}, {1, 1}, 1}, init) {}

template <typename T>
Var<T> ReduceSize<T>::forward(const Var<T>& x, const ForwardContext& ctx, Tensor<T>* se_gates) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[3] != dim_) {
    throw DimensionError("reduce_size expects [B, H, W, " + std::to_string(dim_) + "], got " + shape_str(s));
  }
  if (s[1] < 2 || s[2] < 2) throw ShapeError("reduce_size needs H, W >= 2, got " + shape_str(s));
  const Var<T> xc = permute(x, {0, 3, 1, 2});  // [B, C, H, W]
  const Var<T> x2 = add(xc, swish(dw_.forward(xc)));
  const Var<T> z = mean(x2, {2, 3});
  const Var<T> gates = sigmoid(se2_.forward(swish(se1_.forward(z))));
  if (se_gates) *se_gates = gates.value();
  const Var<T> x3 = mul(x2, broadcast_to(reshape(gates, {s[0], s[3], 1, 1}), x2.shape()));
  const Var<T> y = bn_.forward(pw_.forward(x3), ctx);
  return permute(down_.forward(y), {0, 2, 3, 1});
}

template <typename T>
void ReduceSize<T>::collect(const std::string& prefix, Registry<T>& r) const {
  dw_.collect(prefix + ".dw", r);
  se1_.collect(prefix + ".se.fc1", r);
  se2_.collect(prefix + ".se.fc2", r);
  pw_.collect(prefix + ".pw", r);
  bn_.collect(prefix + ".bn", r);
  down_.collect(prefix + ".down", r);
}

template <typename T>
Backbone<T>::Backbone(const ModelConfig& cfg, Initializer& init) {
  const std::int64_t total = cfg.total_blocks();
  std::int64_t global = 0;
  for (std::size_t l = 0; l < cfg.depths.size(); ++l) {
    const std::int64_t d = cfg.stage_dim(l);
    std::vector<GcVitBlock<T>> stage;
    for (std::int64_t b = 0; b < cfg.depths[l]; ++b, ++global) {
      const double rate = total > 1 ? cfg.drop_path * static_cast<double>(global) / static_cast<double>(total - 1) : 0.0;
      stage.emplace_back(d, cfg.heads[l], rate, cfg, init);
    }
    blocks_.push_back(std::move(stage));
    if (l + 1 < cfg.depths.size()) reduces_.emplace_back(d, init);
  }
}

template <typename T>
Var<T> Backbone<T>::forward(const Var<T>& tokens, const ForwardContext& ctx) const {
  Var<T> x = tokens;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    for (const auto& b : blocks_[l]) x = b.forward(x, ctx);
    ctx.record("stage" + std::to_string(l + 1), x.shape());
    if (l < reduces_.size()) {
      x = reduces_[l].forward(x, ctx);
      ctx.record("reduce" + std::to_string(l + 1), x.shape());
    }
  }
  return x;
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, Registry<T>& r) const {
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    for (std::size_t b = 0; b < blocks_[l].size(); ++b) {
      blocks_[l][b].collect(prefix + ".stage" + std::to_string(l + 1) + ".block" + std::to_string(b), r);
    }
    if (l < reduces_.size()) reduces_[l].collect(prefix + ".reduce" + std::to_string(l + 1), r);
  }
}

#define HYSPEC_INSTANTIATE_BACKBONE(T)                                                                \
  template struct Windows<T>;                                                                           \
  template Windows<T> window_partition<T>(const Var<T>&, std::int64_t);                                 \
  template Var<T> window_reverse<T>(const Var<T>&, std::int64_t, std::int64_t, std::int64_t, std::int64_t); \
  template struct RelPosBias<T>;                                                                        \
  template class WindowAttention<T>;                                                                    \
  template struct SwiGlu<T>;                                                                            \
  template class GcVitBlock<T>;                                                                         \
  template class ReduceSize<T>;                                                                         \
  template class Backbone<T>;

HYSPEC_INSTANTIATE_BACKBONE(float)
HYSPEC_INSTANTIATE_BACKBONE(double)

}  // namespace hyspec::model
