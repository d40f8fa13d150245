#include "hyspec/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "hyspec/numerics/gemm.hpp"

namespace hyspec::numerics {
namespace {

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& p) {
  return p->requires_grad;
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

std::int64_t norm_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ConfigError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// dst[i] = src[base + sum idx_a * src_strides_a], iterating `it` row-major.
template <typename T>
void gather_strided(const Shape& it, const T* src, const Shape& ss, std::int64_t base, T* dst) {
  const std::size_t r = it.size();
  if (r == 0) {
    dst[0] = src[base];
    return;
  }
  const std::int64_t inner = it[r - 1];
  const std::int64_t is = ss[r - 1];
  const std::int64_t outer = shape_numel(it) / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off = base;
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* s = src + off;
    if (is == 1) {
      std::copy(s, s + inner, dst);
    } else {
      for (std::int64_t j = 0; j < inner; ++j) dst[j] = s[j * is];
    }
    dst += inner;
    for (std::int64_t a = static_cast<std::int64_t>(r) - 2; a >= 0; --a) {
      const auto ua = static_cast<std::size_t>(a);
      ++idx[ua];
      off += ss[ua];
      if (idx[ua] < it[ua]) break;
      off -= ss[ua] * it[ua];
      idx[ua] = 0;
    }
  }
}

// dst[base + sum idx_a * dst_strides_a] += src[i], iterating `it` row-major.
template <typename T>
void scatter_add_strided(const Shape& it, const T* src, T* dst, const Shape& ds, std::int64_t base) {
  const std::size_t r = it.size();
  if (r == 0) {
    dst[base] += src[0];
    return;
  }
  const std::int64_t inner = it[r - 1];
  const std::int64_t is = ds[r - 1];
  const std::int64_t outer = shape_numel(it) / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off = base;
  for (std::int64_t o = 0; o < outer; ++o) {
    T* d = dst + off;
    if (is == 1) {
      for (std::int64_t j = 0; j < inner; ++j) d[j] += src[j];
    } else if (is == 0) {
      T acc = T(0);
      for (std::int64_t j = 0; j < inner; ++j) acc += src[j];
      d[0] += acc;
    } else {
      for (std::int64_t j = 0; j < inner; ++j) d[j * is] += src[j];
    }
    src += inner;
    for (std::int64_t a = static_cast<std::int64_t>(r) - 2; a >= 0; --a) {
      const auto ua = static_cast<std::size_t>(a);
      ++idx[ua];
      off += ds[ua];
      if (idx[ua] < it[ua]) break;
      off -= ds[ua] * it[ua];
      idx[ua] = 0;
    }
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

// ---------------------------------------------------------------- matmul

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) fail();
  const std::int64_t m = sa[sa.size() - 2];
  const std::int64_t k = sa.back();
  const std::int64_t n = sb.back();
  if (sb[sb.size() - 2] != k) fail();
  const bool shared_b = sb.size() == 2;
  if (!shared_b && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) fail();
  const std::int64_t batch = shape_numel(sa) / (m * k);

  Shape so(sa.begin(), sa.end() - 1);
  so.push_back(n);
  Tensor<T> out(so);
  if (shared_b) {
    gemm<T>(false, false, batch * m, n, k, a.value().data(), b.value().data(), out.data(), false);
  } else {
    for (std::int64_t i = 0; i < batch; ++i) {
      gemm<T>(false, false, m, n, k, a.value().data() + i * m * k, b.value().data() + i * k * n,
              out.data() + i * m * n, false);
    }
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T* g = self.grad.data();
    if (wants(pa)) {
      Tensor<T> ga(pa->value.shape());
      if (shared_b) {
        gemm<T>(false, true, batch * m, k, n, g, pb->value.data(), ga.data(), false);
      } else {
        for (std::int64_t i = 0; i < batch; ++i) {
          gemm<T>(false, true, m, k, n, g + i * m * n, pb->value.data() + i * k * n, ga.data() + i * m * k,
                  false);
        }
      }
      pa->accumulate(std::move(ga));
    }
    if (wants(pb)) {
      Tensor<T> gb(pb->value.shape());
      if (shared_b) {
        gemm<T>(true, false, k, n, batch * m, pa->value.data(), g, gb.data(), false);
      } else {
        for (std::int64_t i = 0; i < batch; ++i) {
          gemm<T>(true, false, k, n, m, pa->value.data() + i * m * k, g + i * m * n, gb.data() + i * k * n,
                  false);
        }
      }
      pb->accumulate(std::move(gb));
    }
  });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  const T* y = b.value().data();
  T* o = out.data();
  for (std::int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = x[i] + y[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (wants(p)) p->accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  const T* y = b.value().data();
  T* o = out.data();
  for (std::int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = x[i] - y[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
    if (wants(self.parents[1])) {
      Tensor<T> g = self.grad;
      for (auto& v : g.vec()) v = -v;
      self.parents[1]->accumulate(std::move(g));
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  const T* y = b.value().data();
  T* o = out.data();
  for (std::int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = x[i] * y[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const std::int64_t n = self.grad.numel();
    const T* g = self.grad.data();
    for (int which = 0; which < 2; ++which) {
      auto& p = self.parents[static_cast<std::size_t>(which)];
      if (!wants(p)) continue;
      const T* other = self.parents[static_cast<std::size_t>(1 - which)]->value.data();
      Tensor<T> gp(p->value.shape());
      T* d = gp.data();
      for (std::int64_t i = 0; i < n; ++i) d[i] = g[i] * other[i];
      p->accumulate(std::move(gp));
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= c;
  return make_result<T>(std::move(out), {a}, [c](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (auto& v : g.vec()) v *= c;
    self.parents[0]->accumulate(std::move(g));
  });
}

// ---------------------------------------------------------------- layout

template <typename T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
  const Shape& in = a.shape();
  if (in.size() > shape.size()) {
    throw DimensionError("broadcast_to: cannot broadcast " + shape_str(in) + " to " + shape_str(shape));
  }
  const std::size_t lead = shape.size() - in.size();
  const Shape in_strides = strides_of(in);
  Shape ss(shape.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::int64_t e = in[i];
    const std::int64_t t = shape[lead + i];
    if (e != t && e != 1) {
      throw DimensionError("broadcast_to: cannot broadcast " + shape_str(in) + " to " + shape_str(shape));
    }
    ss[lead + i] = (e == 1 && t != 1) ? 0 : in_strides[i];
  }
  Tensor<T> out(shape);
  gather_strided(shape, a.value().data(), ss, 0, out.data());
  return make_result<T>(std::move(out), {a}, [ss, shape](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T> g(p->value.shape());
    scatter_add_strided(shape, self.grad.data(), g.data(), ss, 0);
    p->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, const Shape& shape) {
  Tensor<T> out = a.value().reshaped(shape);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->accumulate(self.grad.reshaped(p->value.shape()));
  });
}

template <typename T>
Var<T> permute(const Var<T>& a, const Axes& order) {
  const Shape& in = a.shape();
  if (order.size() != in.size()) throw DimensionError("permute: order rank mismatch for " + shape_str(in));
  std::vector<bool> used(in.size(), false);
  Shape out_shape(in.size());
  Shape ss(in.size());
  const Shape st = strides_of(in);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto ax = static_cast<std::size_t>(order[i]);
    if (order[i] < 0 || ax >= in.size() || used[ax]) throw ConfigError("permute: invalid axis order");
    used[ax] = true;
    out_shape[i] = in[ax];
    ss[i] = st[ax];
  }
  Tensor<T> out(out_shape);
  gather_strided(out_shape, a.value().data(), ss, 0, out.data());
  return make_result<T>(std::move(out), {a}, [ss, out_shape](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T> g(p->value.shape());
    scatter_add_strided(out_shape, self.grad.data(), g.data(), ss, 0);
    p->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::int64_t axis, std::int64_t start, std::int64_t length) {
  const Shape& in = a.shape();
  axis = norm_axis(axis, static_cast<std::int64_t>(in.size()), "slice");
  const auto ua = static_cast<std::size_t>(axis);
  if (start < 0 || length <= 0 || start + length > in[ua]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis of extent " + std::to_string(in[ua]));
  }
  Shape out_shape = in;
  out_shape[ua] = length;
  const Shape st = strides_of(in);
  const std::int64_t base = start * st[ua];
  Tensor<T> out(out_shape);
  gather_strided(out_shape, a.value().data(), st, base, out.data());
  return make_result<T>(std::move(out), {a}, [st, base, out_shape](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T> g(p->value.shape());
    scatter_add_strided(out_shape, self.grad.data(), g.data(), st, base);
    p->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> pad(const Var<T>& a, const std::vector<std::pair<std::int64_t, std::int64_t>>& widths) {
  const Shape& in = a.shape();
  if (widths.size() != in.size()) throw DimensionError("pad: one (before, after) pair per axis required");
  Shape out_shape = in;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (widths[i].first < 0 || widths[i].second < 0) throw ConfigError("pad: negative width");
    out_shape[i] += widths[i].first + widths[i].second;
  }
  const Shape st = strides_of(out_shape);
  std::int64_t base = 0;
  for (std::size_t i = 0; i < in.size(); ++i) base += widths[i].first * st[i];
  Tensor<T> out(out_shape);
  scatter_add_strided(in, a.value().data(), out.data(), st, base);
  return make_result<T>(std::move(out), {a}, [st, base](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T> g(p->value.shape());
    gather_strided(p->value.shape(), self.grad.data(), st, base, g.data());
    p->accumulate(std::move(g));
  });
}

// ---------------------------------------------------------------- convolution

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  if (stride <= 0) throw ConfigError("conv: stride must be positive");
  if (pad < 0) throw ConfigError("conv: padding must be non-negative");
  if (k > in + 2 * pad) {
    throw ShapeError("conv: kernel extent " + std::to_string(k) + " exceeds padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

struct ConvGeom {
  std::int64_t batch, cin, cout, groups, cg, coutg;
  std::int64_t id, ih, iw;  // input spatial
  std::int64_t kd, kh, kw;
  std::int64_t sd, sh, sw;
  std::int64_t pd, ph, pw;
  std::int64_t od, oh, ow;
  std::int64_t in_vol() const { return id * ih * iw; }
  std::int64_t out_vol() const { return od * oh * ow; }
  std::int64_t k_vol() const { return kd * kh * kw; }
  std::int64_t col_rows() const { return cg * k_vol(); }
};

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const std::int64_t ov = g.out_vol();
  for (std::int64_t c = 0; c < g.cg; ++c) {
    const T* xc = x + c * g.in_vol();
    for (std::int64_t a = 0; a < g.kd; ++a) {
      for (std::int64_t b = 0; b < g.kh; ++b) {
        for (std::int64_t e = 0; e < g.kw; ++e) {
          T* row = cols + (((c * g.kd + a) * g.kh + b) * g.kw + e) * ov;
          for (std::int64_t od = 0; od < g.od; ++od) {
            const std::int64_t zd = od * g.sd - g.pd + a;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const std::int64_t zh = oh * g.sh - g.ph + b;
              T* dst = row + (od * g.oh + oh) * g.ow;
              if (zd < 0 || zd >= g.id || zh < 0 || zh >= g.ih) {
                std::fill(dst, dst + g.ow, T(0));
                continue;
              }
              const T* src = xc + (zd * g.ih + zh) * g.iw;
              if (g.sw == 1) {
                const std::int64_t lo = std::clamp<std::int64_t>(g.pw - e, 0, g.ow);
                const std::int64_t hi = std::clamp<std::int64_t>(g.iw + g.pw - e, lo, g.ow);
                std::fill(dst, dst + lo, T(0));
                std::copy(src + lo - g.pw + e, src + hi - g.pw + e, dst + lo);
                std::fill(dst + hi, dst + g.ow, T(0));
                continue;
              }
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                const std::int64_t zw = ow * g.sw - g.pw + e;
                dst[ow] = (zw >= 0 && zw < g.iw) ? src[zw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* dx) {
  const std::int64_t ov = g.out_vol();
  for (std::int64_t c = 0; c < g.cg; ++c) {
    T* xc = dx + c * g.in_vol();
    for (std::int64_t a = 0; a < g.kd; ++a) {
      for (std::int64_t b = 0; b < g.kh; ++b) {
        for (std::int64_t e = 0; e < g.kw; ++e) {
          const T* row = cols + (((c * g.kd + a) * g.kh + b) * g.kw + e) * ov;
          for (std::int64_t od = 0; od < g.od; ++od) {
            const std::int64_t zd = od * g.sd - g.pd + a;
            if (zd < 0 || zd >= g.id) continue;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const std::int64_t zh = oh * g.sh - g.ph + b;
              if (zh < 0 || zh >= g.ih) continue;
              const T* src = row + (od * g.oh + oh) * g.ow;
              T* dst = xc + (zd * g.ih + zh) * g.iw;
              if (g.sw == 1) {
                const std::int64_t lo = std::clamp<std::int64_t>(g.pw - e, 0, g.ow);
                const std::int64_t hi = std::clamp<std::int64_t>(g.iw + g.pw - e, lo, g.ow);
                T* d = dst - g.pw + e;
                for (std::int64_t ow = lo; ow < hi; ++ow) d[ow] += src[ow];
                continue;
              }
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                const std::int64_t zw = ow * g.sw - g.pw + e;
                if (zw >= 0 && zw < g.iw) dst[zw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvSpec& spec) {
  if (spec.dims != 2 && spec.dims != 3) throw ConfigError("conv: dims must be 2 or 3");
  const auto nd = static_cast<std::size_t>(spec.dims);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != nd + 2 || ws.size() != nd + 2) {
    throw DimensionError("conv: input " + shape_str(xs) + " / kernel " + shape_str(ws) + " rank mismatch for " +
                         std::to_string(spec.dims) + "-d convolution");
  }
  auto per_axis = [&](const std::vector<std::int64_t>& v, std::int64_t dflt, const char* what) {
    if (v.empty()) return std::vector<std::int64_t>(nd, dflt);
    if (v.size() != nd) throw ConfigError(std::string("conv: ") + what + " needs one entry per spatial axis");
    return v;
  };
  const auto stride = per_axis(spec.stride, 1, "stride");
  const auto padding = per_axis(spec.padding, 0, "padding");

  ConvGeom g{};
  g.batch = xs[0];
  g.cin = xs[1];
  g.cout = ws[0];
  g.groups = spec.groups;
  if (g.groups <= 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ConfigError("conv: groups " + std::to_string(g.groups) + " must divide input channels " +
                      std::to_string(g.cin) + " and output channels " + std::to_string(g.cout));
  }
  g.cg = g.cin / g.groups;
  g.coutg = g.cout / g.groups;
  if (ws[1] != g.cg) {
    throw DimensionError("conv: kernel " + shape_str(ws) + " expects " + std::to_string(ws[1]) +
                         " channels per group, input " + shape_str(xs) + " provides " + std::to_string(g.cg));
  }
  const std::size_t off = nd == 3 ? 0 : 1;  // 2-d runs as 3-d with unit depth
  std::int64_t in_sp[3] = {1, 1, 1}, k_sp[3] = {1, 1, 1}, s_sp[3] = {1, 1, 1}, p_sp[3] = {0, 0, 0};
  for (std::size_t i = 0; i < nd; ++i) {
    in_sp[i + off] = xs[2 + i];
    k_sp[i + off] = ws[2 + i];
    s_sp[i + off] = stride[i];
    p_sp[i + off] = padding[i];
  }
  g.id = in_sp[0], g.ih = in_sp[1], g.iw = in_sp[2];
  g.kd = k_sp[0], g.kh = k_sp[1], g.kw = k_sp[2];
  g.sd = s_sp[0], g.sh = s_sp[1], g.sw = s_sp[2];
  g.pd = p_sp[0], g.ph = p_sp[1], g.pw = p_sp[2];
  g.od = conv_out_extent(g.id, g.kd, g.sd, g.pd);
  g.oh = conv_out_extent(g.ih, g.kh, g.sh, g.ph);
  g.ow = conv_out_extent(g.iw, g.kw, g.sw, g.pw);
  const bool has_bias = bias.valid();
  if (has_bias && (bias.shape().size() != 1 || bias.shape()[0] != g.cout)) {
    throw DimensionError("conv: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(g.cout) +
                         " output channels");
  }

  Shape out_shape{g.batch, g.cout};
  const std::int64_t out_sp[3] = {g.od, g.oh, g.ow};
  for (std::size_t i = 0; i < nd; ++i) out_shape.push_back(out_sp[i + off]);
  Tensor<T> out(out_shape);

  const std::int64_t ov = g.out_vol();
  const std::int64_t kc = g.col_rows();
  std::vector<T> cols(static_cast<std::size_t>(kc * ov));
  const T* xd = x.value().data();
  const T* wd = w.value().data();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t gi = 0; gi < g.groups; ++gi) {
      im2col(g, xd + (b * g.cin + gi * g.cg) * g.in_vol(), cols.data());
      gemm<T>(false, false, g.coutg, ov, kc, wd + gi * g.coutg * kc, cols.data(),
              out.data() + (b * g.cout + gi * g.coutg) * ov, false);
    }
    if (has_bias) {
      const T* bd = bias.value().data();
      for (std::int64_t c = 0; c < g.cout; ++c) {
        T* o = out.data() + (b * g.cout + c) * ov;
        for (std::int64_t i = 0; i < ov; ++i) o[i] += bd[c];
      }
    }
  }

  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [g, has_bias](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const std::int64_t ov = g.out_vol();
    const std::int64_t kc = g.col_rows();
    const T* gd = self.grad.data();
    std::vector<T> cols(static_cast<std::size_t>(kc * ov));
    Tensor<T> gx, gw;
    if (wants(px)) gx = Tensor<T>(px->value.shape());
    if (wants(pw)) gw = Tensor<T>(pw->value.shape());
    for (std::int64_t b = 0; b < g.batch; ++b) {
      for (std::int64_t gi = 0; gi < g.groups; ++gi) {
        const T* gout = gd + (b * g.cout + gi * g.coutg) * ov;
        if (wants(pw)) {
          im2col(g, px->value.data() + (b * g.cin + gi * g.cg) * g.in_vol(), cols.data());
          gemm<T>(false, true, g.coutg, kc, ov, gout, cols.data(), gw.data() + gi * g.coutg * kc, true);
        }
        if (wants(px)) {
          gemm<T>(true, false, kc, ov, g.coutg, pw->value.data() + gi * g.coutg * kc, gout, cols.data(), false);
          col2im(g, cols.data(), gx.data() + (b * g.cin + gi * g.cg) * g.in_vol());
        }
      }
    }
    if (wants(px)) px->accumulate(std::move(gx));
    if (wants(pw)) pw->accumulate(std::move(gw));
    if (has_bias && wants(self.parents[2])) {
      Tensor<T> gbias(Shape{g.cout});
      for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t c = 0; c < g.cout; ++c) {
          const T* o = gd + (b * g.cout + c) * ov;
          T acc = T(0);
          for (std::int64_t i = 0; i < ov; ++i) acc += o[i];
          gbias[c] += acc;
        }
      }
      self.parents[2]->accumulate(std::move(gbias));
    }
  });
}

// ---------------------------------------------------------------- activations

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind) {
  Tensor<T> out(x.shape());
  const T* xd = x.value().data();
  T* o = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T s = stable_sigmoid(xd[i]);
    o[i] = kind == Activation::kSwish ? xd[i] * s : s;
  }
  return make_result<T>(std::move(out), {x}, [kind](Node<T>& self) {
    auto& p = self.parents[0];
    const std::int64_t n = self.grad.numel();
    const T* g = self.grad.data();
    const T* xd = p->value.data();
    const T* y = self.value.data();
    Tensor<T> gx(p->value.shape());
    T* d = gx.data();
    if (kind == Activation::kSwish) {
      for (std::int64_t i = 0; i < n; ++i) {
        const T s = stable_sigmoid(xd[i]);
        d[i] = g[i] * s * (T(1) + xd[i] * (T(1) - s));
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) d[i] = g[i] * y[i] * (T(1) - y[i]);
    }
    p->accumulate(std::move(gx));
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::int64_t axis) {
  const Shape& s = x.shape();
  axis = norm_axis(axis, static_cast<std::int64_t>(s.size()), "softmax");
  const auto ua = static_cast<std::size_t>(axis);
  const std::int64_t len = s[ua];
  std::int64_t inner = 1;
  for (std::size_t i = ua + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t outer = x.numel() / (len * inner);
  Tensor<T> out(s);
  const T* xd = x.value().data();
  T* o = out.data();
  for (std::int64_t a = 0; a < outer; ++a) {
    for (std::int64_t c = 0; c < inner; ++c) {
      const std::int64_t base = a * len * inner + c;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      T tot = T(0);
      for (std::int64_t j = 0; j < len; ++j) {
        const T e = std::exp(xd[base + j * inner] - mx);
        o[base + j * inner] = e;
        tot += e;
      }
      const T inv = T(1) / tot;
      for (std::int64_t j = 0; j < len; ++j) o[base + j * inner] *= inv;
    }
  }
  return make_result<T>(std::move(out), {x}, [len, inner, outer](Node<T>& self) {
    auto& p = self.parents[0];
    const T* y = self.value.data();
    const T* g = self.grad.data();
    Tensor<T> gx(p->value.shape());
    T* d = gx.data();
    for (std::int64_t a = 0; a < outer; ++a) {
      for (std::int64_t c = 0; c < inner; ++c) {
        const std::int64_t base = a * len * inner + c;
        T dot = T(0);
        for (std::int64_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::int64_t j = 0; j < len; ++j) {
          const std::int64_t k = base + j * inner;
          d[k] = y[k] * (g[k] - dot);
        }
      }
    }
    p->accumulate(std::move(gx));
  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> reduce(const Var<T>& x, Reduction kind, const Axes& axes) {
  const Shape& s = x.shape();
  if (axes.empty()) throw ConfigError("reduce: empty axis list");
  std::vector<bool> red(s.size(), false);
  for (auto a : axes) {
    const auto na = static_cast<std::size_t>(norm_axis(a, static_cast<std::int64_t>(s.size()), "reduce"));
    if (red[na]) throw ConfigError("reduce: duplicate axis " + std::to_string(a));
    red[na] = true;
  }
  Shape out_shape;
  std::int64_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (red[i]) {
      count *= s[i];
    } else {
      out_shape.push_back(s[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  // Destination strides seen from the input's axes (0 on reduced axes).
  Shape ds(s.size(), 0);
  std::int64_t acc = 1;
  for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 1; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!red[ui]) {
      ds[ui] = acc;
      acc *= s[ui];
    }
  }
  Tensor<T> out(out_shape);
  scatter_add_strided(s, x.value().data(), out.data(), ds, 0);
  const T factor = kind == Reduction::kMean ? T(1) / static_cast<T>(count) : T(1);
  if (kind == Reduction::kMean) {
    for (auto& v : out.vec()) v *= factor;
  }
  return make_result<T>(std::move(out), {x}, [ds, factor](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T> gx(p->value.shape());
    gather_strided(p->value.shape(), self.grad.data(), ds, 0, gx.data());
    if (factor != T(1)) {
      for (auto& v : gx.vec()) v *= factor;
    }
    p->accumulate(std::move(gx));
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Axes all(x.shape().size());
  std::iota(all.begin(), all.end(), 0);
  return reduce(x, Reduction::kSum, all);
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int64_t> idx) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw DimensionError("gather_rows: table must be rank 2, got " + shape_str(s));
  const std::int64_t rows = s[0];
  const std::int64_t cols = s[1];
  std::vector<std::int64_t> index(idx.begin(), idx.end());
  for (auto i : index) {
    if (i < 0 || i >= rows) throw IndexError("gather_rows: row " + std::to_string(i) + " out of range");
  }
  Tensor<T> out(Shape{static_cast<std::int64_t>(index.size()), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(table.value().data() + index[r] * cols, cols, out.data() + static_cast<std::int64_t>(r) * cols);
  }
  return make_result<T>(std::move(out), {table}, [index, cols](Node<T>& self) {
    auto& p = self.parents[0];
    Tensor<T> g(p->value.shape());
    for (std::size_t r = 0; r < index.size(); ++r) {
      const T* src = self.grad.data() + static_cast<std::int64_t>(r) * cols;
      T* dst = g.data() + index[r] * cols;
      for (std::int64_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    p->accumulate(std::move(g));
  });
}

// ---------------------------------------------------------------- normalization

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const Shape& s = x.shape();
  const std::int64_t f = s.back();
  if (gamma.shape() != Shape{f} || beta.shape() != Shape{f}) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match features of " + shape_str(s));
  }
  const std::int64_t rows = x.numel() / f;
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  Tensor<T> out(s);
  const T* xd = x.value().data();
  const T* gd = gamma.value().data();
  const T* bd = beta.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd + r * f;
    T mu = T(0);
    for (std::int64_t j = 0; j < f; ++j) mu += row[j];
    mu /= static_cast<T>(f);
    T var = T(0);
    for (std::int64_t j = 0; j < f; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(f);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < f; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[static_cast<std::size_t>(r * f + j)] = h;
      out[r * f + j] = h * gd[j] + bd[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [xhat, inv_std, rows, f](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const T* g = self.grad.data();
    const T* gam = pg->value.data();
    if (wants(px)) {
      Tensor<T> gx(px->value.shape());
      std::vector<T> dh(static_cast<std::size_t>(f));
      for (std::int64_t r = 0; r < rows; ++r) {
        T m1 = T(0), m2 = T(0);
        for (std::int64_t j = 0; j < f; ++j) {
          const T d = g[r * f + j] * gam[j];
          dh[static_cast<std::size_t>(j)] = d;
          m1 += d;
          m2 += d * (*xhat)[static_cast<std::size_t>(r * f + j)];
        }
        m1 /= static_cast<T>(f);
        m2 /= static_cast<T>(f);
        const T is = (*inv_std)[static_cast<std::size_t>(r)];
        for (std::int64_t j = 0; j < f; ++j) {
          gx[r * f + j] = is * (dh[static_cast<std::size_t>(j)] - m1 - (*xhat)[static_cast<std::size_t>(r * f + j)] * m2);
        }
      }
      px->accumulate(std::move(gx));
    }
    if (wants(pg) || wants(pb)) {
      Tensor<T> gg(Shape{f}), gb(Shape{f});
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < f; ++j) {
          gg[j] += g[r * f + j] * (*xhat)[static_cast<std::size_t>(r * f + j)];
          gb[j] += g[r * f + j];
        }
      }
      if (wants(pg)) pg->accumulate(std::move(gg));
      if (wants(pb)) pb->accumulate(std::move(gb));
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                  bool train) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("batch_norm: expected [B, C, ...], got " + shape_str(s));
  const std::int64_t batch = s[0];
  const std::int64_t ch = s[1];
  if (gamma.shape() != Shape{ch} || beta.shape() != Shape{ch} || state.running_mean.shape() != Shape{ch}) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(ch) + " channels");
  }
  if (train && batch < 2) {
    throw DegenerateBatchError("batch_norm: train mode needs a batch of at least 2, got " + std::to_string(batch));
  }
  const std::int64_t sp = x.numel() / (batch * ch);
  const std::int64_t count = batch * sp;
  const T* xd = x.value().data();
  const T eps = static_cast<T>(state.eps);

  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ch));
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  std::vector<T> mu(static_cast<std::size_t>(ch));
  for (std::int64_t c = 0; c < ch; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    if (train) {
      T m = T(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = xd + (b * ch + c) * sp;
        for (std::int64_t i = 0; i < sp; ++i) m += p[i];
      }
      m /= static_cast<T>(count);
      T v = T(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = xd + (b * ch + c) * sp;
        for (std::int64_t i = 0; i < sp; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const T biased = v / static_cast<T>(count);
      const T unbiased = v / static_cast<T>(count - 1);
      mu[uc] = m;
      (*inv_std)[uc] = T(1) / std::sqrt(biased + eps);
      const T mom = static_cast<T>(state.momentum);
      state.running_mean[c] = (T(1) - mom) * state.running_mean[c] + mom * m;
      state.running_var[c] = (T(1) - mom) * state.running_var[c] + mom * unbiased;
    } else {
      mu[uc] = state.running_mean[c];
      (*inv_std)[uc] = T(1) / std::sqrt(state.running_var[c] + eps);
    }
  }
  Tensor<T> out(s);
  const T* gd = gamma.value().data();
  const T* bd = beta.value().data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      const std::int64_t base = (b * ch + c) * sp;
      for (std::int64_t i = 0; i < sp; ++i) {
        const T h = (xd[base + i] - mu[uc]) * (*inv_std)[uc];
        (*xhat)[static_cast<std::size_t>(base + i)] = h;
        out[base + i] = h * gd[c] + bd[c];
      }
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const T* g = self.grad.data();
    const T* gam = pg->value.data();
    std::vector<T> sum_g(static_cast<std::size_t>(ch), T(0)), sum_gh(static_cast<std::size_t>(ch), T(0));
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t c = 0; c < ch; ++c) {
        const std::int64_t base = (b * ch + c) * sp;
        T a1 = T(0), a2 = T(0);
        for (std::int64_t i = 0; i < sp; ++i) {
          a1 += g[base + i];
          a2 += g[base + i] * (*xhat)[static_cast<std::size_t>(base + i)];
        }
        sum_g[static_cast<std::size_t>(c)] += a1;
        sum_gh[static_cast<std::size_t>(c)] += a2;
      }
    }
    if (wants(px)) {
      Tensor<T> gx(px->value.shape());
      const T n = static_cast<T>(count);
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < ch; ++c) {
          const auto uc = static_cast<std::size_t>(c);
          const std::int64_t base = (b * ch + c) * sp;
          const T k = gam[c] * (*inv_std)[uc];
          for (std::int64_t i = 0; i < sp; ++i) {
            if (train) {
              gx[base + i] = k * (g[base + i] - sum_g[uc] / n - (*xhat)[static_cast<std::size_t>(base + i)] * sum_gh[uc] / n);
            } else {
              gx[base + i] = k * g[base + i];
            }
          }
        }
      }
      px->accumulate(std::move(gx));
    }
    if (wants(pg)) pg->accumulate(Tensor<T>(Shape{ch}, sum_gh));
    if (wants(pb)) pb->accumulate(Tensor<T>(Shape{ch}, sum_g));
  });
}

// ---------------------------------------------------------------- loss

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int64_t> targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross_entropy: logits must be [B, K], got " + shape_str(s));
  const std::int64_t batch = s[0];
  const std::int64_t k = s[1];
  if (static_cast<std::int64_t>(targets.size()) != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(batch));
  }
  std::vector<std::int64_t> tg(targets.begin(), targets.end());
  for (auto t : tg) {
    if (t < 0 || t >= k) throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
  }
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch * k));
  const T* z = logits.value().data();
  T loss = T(0);
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* row = z + b * k;
    const T mx = *std::max_element(row, row + k);
    T tot = T(0);
    for (std::int64_t j = 0; j < k; ++j) tot += std::exp(row[j] - mx);
    const T lse = mx + std::log(tot);
    loss += lse - row[tg[static_cast<std::size_t>(b)]];
    for (std::int64_t j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(b * k + j)] = std::exp(row[j] - lse);
  }
  loss /= static_cast<T>(batch);
  return make_result<T>(Tensor<T>::scalar(loss), {logits}, [probs, tg, batch, k](Node<T>& self) {
    auto& p = self.parents[0];
    const T g = self.grad[0] / static_cast<T>(batch);
    Tensor<T> gz(p->value.shape(), *probs);
    for (std::int64_t b = 0; b < batch; ++b) gz[b * k + tg[static_cast<std::size_t>(b)]] -= T(1);
    for (auto& v : gz.vec()) v *= g;
    p->accumulate(std::move(gz));
  });
}

#define HYSPEC_INSTANTIATE_OPS(T)                                                                       \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> scale<T>(const Var<T>&, T);                                                            \
  template Var<T> broadcast_to<T>(const Var<T>&, const Shape&);                                          \
  template Var<T> reshape<T>(const Var<T>&, const Shape&);                                               \
  template Var<T> permute<T>(const Var<T>&, const Axes&);                                                \
  template Var<T> slice<T>(const Var<T>&, std::int64_t, std::int64_t, std::int64_t);                     \
  template Var<T> pad<T>(const Var<T>&, const std::vector<std::pair<std::int64_t, std::int64_t>>&);      \
  template Var<T> conv<T>(const Var<T>&, const Var<T>&, const Var<T>&, const ConvSpec&);                 \
  template Var<T> activation<T>(const Var<T>&, Activation);                                              \
  template Var<T> softmax<T>(const Var<T>&, std::int64_t);                                               \
  template Var<T> reduce<T>(const Var<T>&, Reduction, const Axes&);                                      \
  template Var<T> sum_all<T>(const Var<T>&);                                                             \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const std::int64_t>);                          \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);                    \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&, bool);  \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const std::int64_t>);

HYSPEC_INSTANTIATE_OPS(float)
HYSPEC_INSTANTIATE_OPS(double)

}  // namespace hyspec::numerics
