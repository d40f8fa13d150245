#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "hyspec/model/model.hpp"
#include "hyspec/numerics/grad_check.hpp"
#include "oracle.hpp"

namespace lm = hyspec::model;
namespace ln = hyspec::numerics;
using hyspec::testing::logistic;
using ln::Shape;
using ln::Tensor;
using V = ln::Var<double>;

namespace {

Tensor<double> rand_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  const auto n = static_cast<std::size_t>(ln::shape_numel(s));
  return Tensor<double>(std::move(s), hyspec::testing::random_vec(n, seed, lo, hi));
}

lm::ModelConfig block_cfg(std::int64_t window, std::int64_t rank) {
  lm::ModelConfig c;
  c.window = window;
  c.lora_rank = rank;
  c.lora_dropout = 0.0;
  return c;
}

std::map<std::string, Tensor<double>> params_of(const lm::GcVitBlock<double>& b) {
  lm::Registry<double> r;
  b.collect("b", r);
  std::map<std::string, Tensor<double>> out;
  for (const auto& p : r.params()) out[p.name] = p.var.value();
  return out;
}

using Mat = std::vector<double>;

// rows x in times [in, out] plus bias.
Mat affine(const Mat& x, std::int64_t rows, const Tensor<double>& w, const Tensor<double>* b) {
  const std::int64_t in = w.dim(0), out = w.dim(1);
  Mat y(rows * out, 0.0);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t o = 0; o < out; ++o) {
      double s = b ? (*b)[o] : 0.0;
      for (std::int64_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
  return y;
}

Mat layer_norm(const Mat& x, std::int64_t rows, std::int64_t c, const Tensor<double>& g, const Tensor<double>& b) {
  Mat y(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = 0, v = 0;
    for (std::int64_t i = 0; i < c; ++i) m += x[r * c + i];
    m /= static_cast<double>(c);
    for (std::int64_t i = 0; i < c; ++i) v += (x[r * c + i] - m) * (x[r * c + i] - m);
    v /= static_cast<double>(c);
    for (std::int64_t i = 0; i < c; ++i) y[r * c + i] = (x[r * c + i] - m) / std::sqrt(v + 1e-5) * g[i] + b[i];
  }
  return y;
}

// Plain pre-norm block on [B, H, W, C] with windowed attention (zero padding
// to multiples of M, padded keys excluded), no LoRA, unit residual scales.
Mat reference_block(const Tensor<double>& x, std::int64_t heads, std::int64_t m,
                    std::map<std::string, Tensor<double>>& p) {
  const std::int64_t bsz = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::int64_t rows = bsz * h * w, dh = c / heads;
  const Mat xin = x.vec();
  const Mat n1 = layer_norm(xin, rows, c, p["b.norm1.gamma"], p["b.norm1.beta"]);
  const Mat qkv = affine(n1, rows, p["b.attn.qkv.weight"], &p["b.attn.qkv.bias"]);
  const auto& table = p["b.attn.rel_pos_table"];
  Mat att(rows * c, 0.0);
  const std::int64_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  for (std::int64_t b = 0; b < bsz; ++b)
    for (std::int64_t wr = 0; wr < ph; wr += m)
      for (std::int64_t wc = 0; wc < pw; wc += m)
        for (std::int64_t hd = 0; hd < heads; ++hd)
          for (std::int64_t qi = 0; qi < m * m; ++qi) {
            const std::int64_t qr = wr + qi / m, qc = wc + qi % m;
            if (qr >= h || qc >= w) continue;
            const std::int64_t qrow = (b * h + qr) * w + qc;
            std::vector<double> logit(m * m, -INFINITY);
            for (std::int64_t kj = 0; kj < m * m; ++kj) {
              const std::int64_t kr = wr + kj / m, kc = wc + kj % m;
              double dot = 0;
              if (kr < h && kc < w) {
                const std::int64_t krow = (b * h + kr) * w + kc;
                for (std::int64_t d = 0; d < dh; ++d) dot += qkv[qrow * 3 * c + hd * dh + d] * qkv[krow * 3 * c + c + hd * dh + d];
              }
              const std::int64_t idx = (qi / m - kj / m + m - 1) * (2 * m - 1) + (qi % m - kj % m + m - 1);
              logit[kj] = dot / std::sqrt(static_cast<double>(dh)) + table[idx * heads + hd];
              if (!(kr < h && kc < w)) logit[kj] = -INFINITY;
            }
            double mx = -INFINITY, z = 0;
            for (double l : logit) mx = std::max(mx, l);
            for (double& l : logit) z += (l = std::exp(l - mx));
            for (std::int64_t kj = 0; kj < m * m; ++kj) {
              const std::int64_t kr = wr + kj / m, kc = wc + kj % m;
              if (kr >= h || kc >= w) continue;
              const std::int64_t krow = (b * h + kr) * w + kc;
              for (std::int64_t d = 0; d < dh; ++d) att[qrow * c + hd * dh + d] += logit[kj] / z * qkv[krow * 3 * c + 2 * c + hd * dh + d];
            }
          }
  const Mat proj = affine(att, rows, p["b.attn.proj.weight"], &p["b.attn.proj.bias"]);
  Mat y1(rows * c);
  for (std::size_t i = 0; i < y1.size(); ++i) y1[i] = xin[i] + proj[i];
  const Mat n2 = layer_norm(y1, rows, c, p["b.norm2.gamma"], p["b.norm2.beta"]);
  Mat a = affine(n2, rows, p["b.ffn.w1.weight"], &p["b.ffn.w1.bias"]);
  const Mat g = affine(n2, rows, p["b.ffn.w2.weight"], &p["b.ffn.w2.bias"]);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] * logistic(a[i]) * g[i];
  const Mat f = affine(a, rows, p["b.ffn.w3.weight"], &p["b.ffn.w3.bias"]);
  Mat y(rows * c);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y1[i] + f[i];
  return y;
}

double max_rel(const Tensor<double>& a, const Tensor<double>& b) {
  double scale = 0, diff = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / std::max(scale, 1e-300);
}

}  // namespace

TEST(Windows, CountsAndPadding) {
  const V x = V::constant(rand_tensor({2, 14, 14, 3}, 1));
  const auto w = lm::window_partition(x, 7);
  EXPECT_EQ(w.tokens.shape(), (Shape{8, 49, 3}));
  EXPECT_EQ(w.windows_per_image(), 4);
  EXPECT_FALSE(w.padded());
  EXPECT_TRUE(w.valid.empty());

  const V small = V::constant(rand_tensor({1, 4, 4, 2}, 2));
  const auto p = lm::window_partition(small, 7);
  EXPECT_EQ(p.tokens.shape(), (Shape{1, 49, 2}));
  ASSERT_EQ(p.valid.size(), 49u);
  int valid = 0;
  for (auto v : p.valid) valid += v;
  EXPECT_EQ(valid, 16);
  EXPECT_THROW(lm::window_partition(small, 0), hyspec::ConfigError);
}

TEST(Windows, RoundTripAllShapes) {
  std::uint64_t seed = 3;
  for (std::int64_t h = 1; h <= 9; ++h)
    for (std::int64_t w = 1; w <= 9; w += 2)
      for (std::int64_t m : {1, 2, 3, 4, 7}) {
        const V x = V::constant(rand_tensor({2, h, w, 3}, seed++));
        const auto win = lm::window_partition(x, m);
        const auto back = lm::window_reverse(win.tokens, m, 2, h, w).value();
        EXPECT_EQ(back, x.value()) << h << "x" << w << " M=" << m;
      }
}

TEST(Windows, TokenOrderWithinWindow) {
  Tensor<double> t(Shape{1, 4, 4, 1});
  for (int i = 0; i < 16; ++i) t[i] = i;
  const auto w = lm::window_partition(V::constant(t), 2).tokens.value();
  // Second window (row 0, col 1) holds pixels (0,2) (0,3) (1,2) (1,3).
  EXPECT_EQ(w[4], 2.0);
  EXPECT_EQ(w[5], 3.0);
  EXPECT_EQ(w[6], 6.0);
  EXPECT_EQ(w[7], 7.0);
}

TEST(RelPos, IndexSymmetry) {
  for (std::int64_t m : {1, 2, 4, 7}) {
    const auto idx = lm::relative_position_index(m);
    const std::int64_t n = m * m;
    ASSERT_EQ(static_cast<std::int64_t>(idx.size()), n * n);
    for (std::int64_t i = 0; i < n; ++i) {
      EXPECT_EQ(idx[i * n + i], (m - 1) * (2 * m - 1) + (m - 1));
      for (std::int64_t j = 0; j < n; ++j) EXPECT_EQ(idx[i * n + j] + idx[j * n + i], (2 * m - 1) * (2 * m - 1) - 1);
    }
  }
}

TEST(Attention, RowsSumToOneWithMask) {
  lm::Initializer init(4);
  const auto cfg = block_cfg(4, 2);
  const lm::WindowAttention<double> attn(8, 2, 4, cfg, init);
  const V x = V::constant(rand_tensor({2, 3, 3, 8}, 5, -2, 2));
  const auto win = lm::window_partition(x, 4);
  Tensor<double> a;
  attn.forward(win.tokens, win.valid, lm::ForwardContext{}, &a);
  ASSERT_EQ(a.shape(), (Shape{2, 2, 16, 16}));
  for (std::int64_t r = 0; r < 2 * 2 * 16; ++r) {
    double s = 0;
    for (std::int64_t j = 0; j < 16; ++j) {
      const double v = a[r * 16 + j];
      if (!win.valid[j]) EXPECT_EQ(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, IdenticalTokensGiveUniformWeights) {
  lm::Initializer init(6);
  const lm::WindowAttention<double> attn0(12, 4, 7, block_cfg(7, 4), init);
  auto attn = attn0;
  attn.bias().table.mutable_value().fill(0.0);
  Tensor<double> tok(Shape{1, 49, 12});
  const auto row = hyspec::testing::random_vec(12, 7);
  for (int i = 0; i < 49; ++i)
    for (int c = 0; c < 12; ++c) tok[i * 12 + c] = row[c];
  Tensor<double> a;
  attn.forward(V::constant(tok), {}, lm::ForwardContext{}, &a);
  for (double v : a.vec()) EXPECT_NEAR(v, 1.0 / 49.0, 1e-12);
  EXPECT_THROW(lm::WindowAttention<double>(10, 4, 7, block_cfg(7, 4), init), hyspec::ConfigError);
}

TEST(Attention, StageHeadsForReferenceConfig) {
  lm::Initializer init(1);
  const lm::ModelConfig cfg;
  lm::Backbone<float> bb(cfg, init);
  const std::int64_t expect_heads[] = {4, 8, 16};
  const std::int64_t expect_dims[] = {96, 192, 384};
  std::int64_t total = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    total += static_cast<std::int64_t>(bb.blocks(l).size());
    for (auto& b : bb.blocks(l)) {
      EXPECT_EQ(b.attention().heads(), expect_heads[l]);
      EXPECT_EQ(b.attention().qkv().in, expect_dims[l]);
      EXPECT_EQ(b.attention().qkv().out, 3 * expect_dims[l]);
      EXPECT_EQ(b.ffn().w1.out, 4 * expect_dims[l]);
    }
  }
  EXPECT_EQ(total, 26);
  EXPECT_EQ(cfg.total_blocks(), 26);
  EXPECT_DOUBLE_EQ(bb.blocks(0)[0].drop_path_rate(), 0.0);
  EXPECT_DOUBLE_EQ(bb.blocks(2).back().drop_path_rate(), 0.2);
  EXPECT_DOUBLE_EQ(bb.blocks(1)[0].drop_path_rate(), 0.2 * 3.0 / 25.0);
}

TEST(SwiGluFfn, ZeroInputScalarCaseAndHidden) {
  lm::Initializer init(8);
  lm::SwiGlu<double> f(5, 20, init);
  for (auto* l : {&f.w1, &f.w2, &f.w3}) l->bias.mutable_value().fill(0.0);
  const auto z = f.forward(V::constant(Tensor<double>(Shape{3, 5}))).value();
  for (double v : z.vec()) EXPECT_EQ(v, 0.0);

  lm::SwiGlu<double> s(1, 1, init);
  for (auto* l : {&s.w1, &s.w2, &s.w3}) {
    l->weight.mutable_value().fill(1.0);
    l->bias.mutable_value().fill(0.0);
  }
  const double y = s.forward(V::constant(Tensor<double>(Shape{1, 1}, 1.0))).item();
  EXPECT_NEAR(y, logistic(1.0), 1e-15);
  EXPECT_NEAR(y, 0.731059, 1e-6);

  lm::Initializer init2(1);
  const lm::GcVitBlock<double> b(96, 4, 0.0, block_cfg(7, 16), init2);
  EXPECT_EQ(params_of(b)["b.ffn.w1.weight"].shape(), (Shape{96, 384}));
}

TEST(Block, FreshInitMatchesPlainPreNormBlock) {
  for (std::int64_t hw : {4, 5, 8}) {
    lm::Initializer init(10 + hw);
    const lm::GcVitBlock<double> b(16, 4, 0.1, block_cfg(4, 4), init);
    auto p = params_of(b);
    for (double v : p["b.attn.qkv.lora_b"].vec()) EXPECT_EQ(v, 0.0);
    const auto x = rand_tensor({2, hw, hw, 16}, 20 + hw, -2, 2);
    const auto y = b.forward(V::constant(x), lm::ForwardContext{}).value();
    const auto ref = reference_block(x, 4, 4, p);
    for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10 * std::max(1.0, std::abs(ref[i])));
    // Unit residual scales and zero adapters add exactly nothing.
    lm::ModelConfig plain = block_cfg(4, 0);
    lm::Initializer init3(10 + hw);
    const lm::GcVitBlock<double> q(16, 4, 0.1, plain, init3);
    lm::Registry<double> rb, rq;
    b.collect("b", rb);
    q.collect("b", rq);
    for (auto& e : rq.params())
      for (const auto& f : rb.params())
        if (e.name == f.name) e.var.mutable_value() = f.var.value();
    EXPECT_EQ(q.forward(V::constant(x), lm::ForwardContext{}).value(), y);
  }
}

TEST(Block, EvalDeterministicAndShapePreserving) {
  lm::Initializer init(11);
  const lm::GcVitBlock<double> b(8, 2, 0.5, block_cfg(4, 2), init);
  const V x = V::constant(rand_tensor({3, 6, 5, 8}, 12));
  const auto y = b.forward(x, lm::ForwardContext{}).value();
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(b.forward(x, lm::ForwardContext{}).value(), y);
  std::mt19937_64 rng(1);
  const auto t = b.forward(x, lm::ForwardContext{true, &rng, nullptr}).value();
  EXPECT_EQ(t.shape(), x.shape());
}

TEST(Block, GradCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    lm::Initializer init(100 + seed);
    lm::GcVitBlock<double> b(16, 2, 0.0, block_cfg(4, 2), init);
    lm::Registry<double> r;
    b.collect("b", r);
    std::vector<V> params;
    for (auto& e : r.params()) {
      if (e.name.find("lora_b") != std::string::npos) e.var.mutable_value() = rand_tensor(e.var.shape(), seed + 7, -0.3, 0.3);
      if (e.name == "b.gamma_attn") e.var.mutable_value()[0] = 0.7;
      if (seed == 0 || e.var.numel() <= 64) params.push_back(e.var);
    }
    const V x = V::leaf(rand_tensor({1, 5, 5, 16}, 200 + seed));
    params.push_back(x);
    const V w = V::constant(rand_tensor({1, 5, 5, 16}, 300 + seed));
    const auto res = ln::grad_check([&] { return ln::sum_all(ln::mul(b.forward(x, lm::ForwardContext{}), w)); },
                                    params, 1e-5);
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " param " << res.worst_param;
  }
}

TEST(ReduceSizeOp, ShapesGatesAndZeroDepthwise) {
  lm::Initializer init(13);
  lm::ReduceSize<double> rs(96, init);
  std::mt19937_64 rng(0);
  const V x = V::constant(rand_tensor({2, 7, 7, 96}, 14));
  Tensor<double> gates;
  const auto y = rs.forward(x, lm::ForwardContext{true, &rng, nullptr}, &gates);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 192}));
  for (double g : gates.vec()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  EXPECT_THROW(rs.forward(V::constant(rand_tensor({1, 1, 4, 96}, 1)), lm::ForwardContext{}), hyspec::ShapeError);

  // With a zero depthwise kernel x'' = x, so the gates follow from GAP(x).
  lm::Initializer init2(15);
  lm::ReduceSize<double> small(8, init2);
  small.depthwise().weight.mutable_value().fill(0.0);
  small.depthwise().bias.mutable_value().fill(0.0);
  lm::Registry<double> r;
  small.collect("r", r);
  std::map<std::string, Tensor<double>> p;
  for (const auto& e : r.params()) p[e.name] = e.var.value();
  const auto xs = rand_tensor({1, 3, 3, 8}, 16);
  Tensor<double> g;
  small.forward(V::constant(xs), lm::ForwardContext{}, &g);
  Mat z(8, 0.0);
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 8; ++c) z[c] += xs[i * 8 + c] / 9.0;
  Mat h = affine(z, 1, p["r.se.fc1.weight"], &p["r.se.fc1.bias"]);
  for (double& v : h) v *= logistic(v);
  const Mat s = affine(h, 1, p["r.se.fc2.weight"], &p["r.se.fc2.bias"]);
  ASSERT_EQ(p["r.se.fc1.weight"].shape(), (Shape{8, 2}));
  for (int c = 0; c < 8; ++c) EXPECT_NEAR(g[c], logistic(s[c]), 1e-12);
}

TEST(BackboneNet, ReferenceDimsTrace) {
  lm::Initializer init(17);
  const lm::ModelConfig cfg;
  const lm::Backbone<float> bb(cfg, init);
  std::vector<std::pair<std::string, Shape>> trace;
  const auto in = ln::Tensor<float>(Shape{1, 7, 7, 96}, 0.1f);
  const auto y = bb.forward(ln::Var<float>::constant(in), lm::ForwardContext{false, nullptr, &trace});
  ASSERT_EQ(trace.size(), 5u);
  EXPECT_EQ(trace[0].second, (Shape{1, 7, 7, 96}));
  EXPECT_EQ(trace[1].second, (Shape{1, 4, 4, 192}));
  EXPECT_EQ(trace[2].second, (Shape{1, 4, 4, 192}));
  EXPECT_EQ(trace[3].second, (Shape{1, 2, 2, 384}));
  EXPECT_EQ(trace[4].second, (Shape{1, 2, 2, 384}));
  EXPECT_EQ(bb.forward(ln::Var<float>::constant(in), lm::ForwardContext{}).value(), y.value());
}

TEST(Lora, ScaleZeroInitAndRankBound) {
  lm::Initializer init(18);
  lm::LoraLinear<double> l(12, 10, 4, 8.0, 0.0, init);
  EXPECT_DOUBLE_EQ(l.scale(), 2.0);
  lm::LoraLinear<double> wide_rank(96, 96, 16, 32.0, 0.05, init);
  EXPECT_DOUBLE_EQ(wide_rank.scale(), 2.0);

  Tensor<double> eye(Shape{12, 12});
  for (int i = 0; i < 12; ++i) eye[i * 12 + i] = 1.0;
  const V basis = V::constant(eye);
  const auto base = ln::add(ln::matmul(basis, l.weight), ln::broadcast_to(l.bias, {12, 10})).value();
  EXPECT_EQ(l.forward(basis, lm::ForwardContext{}).value(), base);

  l.lora_b.mutable_value() = rand_tensor({4, 10}, 19);
  const auto y = l.forward(basis, lm::ForwardContext{}).value();
  std::vector<double> delta(120);
  for (int i = 0; i < 120; ++i) delta[i] = y[i] - base[i];
  auto sv = hyspec::testing::singular_values(delta, 12, 10);
  std::sort(sv.rbegin(), sv.rend());
  EXPECT_GT(sv[3] / sv[0], 1e-6);
  EXPECT_LT(sv[4] / sv[0], 1e-8);

  hyspec::drain_warnings();
  lm::LoraLinear<double> wide(4, 6, 4, 8.0, 0.0, init);
  EXPECT_EQ(hyspec::drain_warnings().size(), 1u);
}

TEST(Lora, ZeroInitModelMatchesLoraFreeModel) {
  lm::ModelConfig cfg;
  cfg.dim = 16;
  cfg.depths = {1, 1, 2};
  cfg.heads = {2, 2, 4};
  cfg.window = 4;
  cfg.patch = 9;
  cfg.num_classes = 6;
  lm::SpectralViT<double> with(cfg, 5);
  cfg.lora_rank = 0;
  lm::SpectralViT<double> without(cfg, 99);
  without.copy_from(with);
  const V x = V::constant(rand_tensor({3, 15, 9, 9}, 21));
  const auto a = with.forward(x).value(), b = without.forward(x).value();
  EXPECT_LE(max_rel(a, b), 1e-6);
  EXPECT_EQ(a, b);
}
