#include "hyspec/preprocess/preprocess.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "hyspec/numerics/gemm.hpp"

namespace hyspec::preprocess {

SymEigen jacobi_eigen(std::vector<double> a, std::int64_t n) {
  if (n <= 0 || static_cast<std::int64_t>(a.size()) != n * n) throw ShapeError("jacobi_eigen: expected n x n input");
  auto A = [&](std::int64_t i, std::int64_t j) -> double& { return a[static_cast<std::size_t>(i * n + j)]; };
  std::vector<double> v(static_cast<std::size_t>(n * n), 0.0);
  auto V = [&](std::int64_t i, std::int64_t j) -> double& { return v[static_cast<std::size_t>(i * n + j)]; };
  for (std::int64_t i = 0; i < n; ++i) V(i, i) = 1.0;

  double total = 0.0;
  for (double x : a) total += x * x;
  const double tol = 1e-30 * std::max(total, 1e-300);

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    }
    if (off <= tol) break;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = A(p, p);
        const double aqq = A(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::int64_t k = 0; k < n; ++k) {
          const double akp = A(k, p);
          const double akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double apk = A(p, k);
          const double aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double vkp = V(k, p);
          const double vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return A(x, x) > A(y, y); });
  SymEigen out;
  out.values.resize(static_cast<std::size_t>(n));
  out.vectors.resize(static_cast<std::size_t>(n * n));
  for (std::int64_t j = 0; j < n; ++j) {
    const std::int64_t src = order[static_cast<std::size_t>(j)];
    out.values[static_cast<std::size_t>(j)] = A(src, src);
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < n; ++i) {
      if (std::abs(V(i, src)) > std::abs(V(arg, src))) arg = i;
    }
    const double sign = V(arg, src) < 0 ? -1.0 : 1.0;
    for (std::int64_t i = 0; i < n; ++i) out.vectors[static_cast<std::size_t>(i * n + j)] = sign * V(i, src);
  }
  return out;
}

PcaModel fit_pca(const io::HsiCube& cube, std::int64_t k) {
  const std::int64_t c = cube.bands;
  const std::int64_t n = cube.pixels();
  if (k < 1 || k > c) {
    throw ConfigError("pca: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(c) + "]");
  }
  if (n < 2) throw ConfigError("pca: need at least 2 pixels");
  for (std::size_t i = 0; i < cube.values.size(); ++i) {
    if (!std::isfinite(cube.values[i])) throw NumericError("pca: non-finite input at element " + std::to_string(i));
  }

  PcaModel m;
  m.raw_bands = c;
  m.k = k;
  m.mean.assign(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t p = 0; p < n; ++p) {
    const double* px = cube.pixel(p);
    for (std::int64_t b = 0; b < c; ++b) m.mean[static_cast<std::size_t>(b)] += px[b];
  }
  for (double& v : m.mean) v /= static_cast<double>(n);

  // Covariance accumulated in row blocks to bound memory on large scenes.
  std::vector<double> cov(static_cast<std::size_t>(c * c), 0.0);
  constexpr std::int64_t kBlock = 4096;
  std::vector<double> centered;
  for (std::int64_t start = 0; start < n; start += kBlock) {
    const std::int64_t rows = std::min(kBlock, n - start);
    centered.resize(static_cast<std::size_t>(rows * c));
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* px = cube.pixel(start + r);
      for (std::int64_t b = 0; b < c; ++b) {
        centered[static_cast<std::size_t>(r * c + b)] = px[b] - m.mean[static_cast<std::size_t>(b)];
      }
    }
    numerics::gemm<double>(true, false, c, c, rows, centered.data(), centered.data(), cov.data(), true);
  }
  for (double& v : cov) v /= static_cast<double>(n - 1);
  // Exact symmetry for the rotation sweep.
  for (std::int64_t i = 0; i < c; ++i) {
    for (std::int64_t j = i + 1; j < c; ++j) {
      const double s = 0.5 * (cov[static_cast<std::size_t>(i * c + j)] + cov[static_cast<std::size_t>(j * c + i)]);
      cov[static_cast<std::size_t>(i * c + j)] = s;
      cov[static_cast<std::size_t>(j * c + i)] = s;
    }
  }

  const SymEigen eig = jacobi_eigen(std::move(cov), c);
  m.eigenvalues.resize(static_cast<std::size_t>(k));
  m.components.resize(static_cast<std::size_t>(c * k));
  for (std::int64_t j = 0; j < k; ++j) {
    m.eigenvalues[static_cast<std::size_t>(j)] = std::max(0.0, eig.values[static_cast<std::size_t>(j)]);
    for (std::int64_t i = 0; i < c; ++i) {
      m.components[static_cast<std::size_t>(j * c + i)] = eig.vectors[static_cast<std::size_t>(i * c + j)];
    }
  }
  return m;
}

io::HsiCube apply_pca_whiten(const io::HsiCube& cube, const PcaModel& model) {
  if (cube.bands != model.raw_bands) {
    throw ShapeError("pca: cube has " + std::to_string(cube.bands) + " bands, model expects " +
                     std::to_string(model.raw_bands));
  }
  const std::int64_t c = model.raw_bands;
  const std::int64_t k = model.k;
  // Projection matrix P[c][k] = V[c][k] / sqrt(max(lambda_k, floor)).
  std::vector<double> proj(static_cast<std::size_t>(c * k));
  for (std::int64_t j = 0; j < k; ++j) {
    const double s = 1.0 / std::sqrt(std::max(model.eigenvalues[static_cast<std::size_t>(j)], kEigenFloor));
    for (std::int64_t i = 0; i < c; ++i) proj[static_cast<std::size_t>(i * k + j)] = model.component(i, j) * s;
  }
  io::HsiCube out(cube.height, cube.width, k);
  std::vector<double> centered(static_cast<std::size_t>(c));
  for (std::int64_t p = 0; p < cube.pixels(); ++p) {
    const double* px = cube.pixel(p);
    for (std::int64_t i = 0; i < c; ++i) centered[static_cast<std::size_t>(i)] = px[i] - model.mean[static_cast<std::size_t>(i)];
    double* dst = out.values.data() + p * k;
    for (std::int64_t j = 0; j < k; ++j) dst[j] = 0.0;
    for (std::int64_t i = 0; i < c; ++i) {
      const double xi = centered[static_cast<std::size_t>(i)];
      const double* row = proj.data() + i * k;
      for (std::int64_t j = 0; j < k; ++j) dst[j] += xi * row[j];
    }
  }
  return out;
}

// ------------------------------------------------------------------ HSIP

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& s, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

void save_pca(const std::filesystem::path& path, const PcaModel& model) {
  std::string s = "HSIP";
  put_u32(s, static_cast<std::uint32_t>(model.raw_bands));
  put_u32(s, static_cast<std::uint32_t>(model.k));
  for (double v : model.mean) put_f64(s, v);
  for (double v : model.components) put_f64(s, v);
  for (double v : model.eigenvalues) put_f64(s, v);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

PcaModel load_pca(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 4 || s.compare(0, 4, "HSIP") != 0) throw FormatError("bad magic, expected \"HSIP\"", 0);
  std::size_t pos = 4;
  auto u32 = [&]() {
    if (pos + 4 > s.size()) throw FormatError("truncated header", pos);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  };
  auto f64 = [&]() {
    if (pos + 8 > s.size()) throw FormatError("truncated payload", pos);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  };
  PcaModel m;
  const std::size_t dpos = pos;
  m.raw_bands = u32();
  m.k = u32();
  if (m.raw_bands == 0 || m.k == 0 || m.k > m.raw_bands) throw FormatError("invalid dims", dpos);
  const auto need = static_cast<std::uint64_t>(m.raw_bands) * (1 + static_cast<std::uint64_t>(m.k)) +
                    static_cast<std::uint64_t>(m.k);
  if ((s.size() - pos) / 8 < need) throw FormatError("truncated payload", s.size());
  m.mean.resize(static_cast<std::size_t>(m.raw_bands));
  for (auto& v : m.mean) v = f64();
  m.components.resize(static_cast<std::size_t>(m.raw_bands * m.k));
  for (auto& v : m.components) v = f64();
  m.eigenvalues.resize(static_cast<std::size_t>(m.k));
  for (auto& v : m.eigenvalues) v = f64();
  return m;
}

// ------------------------------------------------------------------ patches

PatchMode parse_patch_mode(const std::string& s) {
  if (s == "per_pixel") return PatchMode::kPerPixel;
  if (s == "non_overlap") return PatchMode::kNonOverlap;
  throw ConfigError("unknown patch mode '" + s + "' (expected per_pixel or non_overlap)");
}

const char* patch_mode_name(PatchMode m) { return m == PatchMode::kPerPixel ? "per_pixel" : "non_overlap"; }

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void extract_patch(const io::HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t p,
                   std::span<float> out) {
  const std::int64_t c = cube.bands;
  if (static_cast<std::int64_t>(out.size()) != c * p * p) throw DimensionError("extract_patch: output buffer size");
  const std::int64_t half = p / 2;
  for (std::int64_t i = 0; i < p; ++i) {
    const std::int64_t r = reflect_index(row - half + i, cube.height);
    for (std::int64_t j = 0; j < p; ++j) {
      const std::int64_t q = reflect_index(col - half + j, cube.width);
      const double* px = cube.pixel(r * cube.width + q);
      for (std::int64_t b = 0; b < c; ++b) out[static_cast<std::size_t>((b * p + i) * p + j)] = static_cast<float>(px[b]);
    }
  }
}

std::vector<Patch> extract_patches(const io::HsiCube& cube, const io::LabelMap& labels, std::int64_t p,
                                   PatchMode mode) {
  io::check_pairing(cube, labels);
  if (p <= 0) throw ConfigError("patch size must be positive");
  std::vector<Patch> out;
  const std::int64_t c = cube.bands;
  if (mode == PatchMode::kPerPixel) {
    if (p % 2 == 0) throw ConfigError("per_pixel patches need an odd size, got " + std::to_string(p));
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t q = 0; q < cube.width; ++q) {
        const auto l = labels.at(r, q);
        if (l == 0) continue;
        Patch pt;
        pt.data.resize(static_cast<std::size_t>(c * p * p));
        extract_patch(cube, r, q, p, pt.data);
        pt.label = l;
        pt.row = r;
        pt.col = q;
        out.push_back(std::move(pt));
      }
    }
    return out;
  }
  if (p > cube.height || p > cube.width) {
    throw ShapeError("non_overlap patch size " + std::to_string(p) + " exceeds the scene");
  }
  for (std::int64_t tr = 0; tr < cube.height / p; ++tr) {
    for (std::int64_t tc = 0; tc < cube.width / p; ++tc) {
      std::map<std::uint16_t, std::int64_t> votes;
      for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t j = 0; j < p; ++j) {
          const auto l = labels.at(tr * p + i, tc * p + j);
          if (l != 0) ++votes[l];
        }
      }
      if (votes.empty()) continue;
      std::uint16_t best = 0;
      std::int64_t best_n = -1;
      for (auto [l, n] : votes) {
        if (n > best_n) best = l, best_n = n;
      }
      Patch pt;
      pt.data.resize(static_cast<std::size_t>(c * p * p));
      for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t j = 0; j < p; ++j) {
          const double* px = cube.pixel((tr * p + i) * cube.width + tc * p + j);
          for (std::int64_t b = 0; b < c; ++b) pt.data[static_cast<std::size_t>((b * p + i) * p + j)] = static_cast<float>(px[b]);
        }
      }
      pt.label = best;
      pt.row = tr * p;
      pt.col = tc * p;
      out.push_back(std::move(pt));
    }
  }
  return out;
}

// ------------------------------------------------------------------ split

std::int64_t SplitSpec::train_count() const {
  std::int64_t n = 0;
  for (const auto& v : train) n += static_cast<std::int64_t>(v.size());
  return n;
}

std::int64_t SplitSpec::test_count() const {
  std::int64_t n = 0;
  for (const auto& v : test) n += static_cast<std::int64_t>(v.size());
  return n;
}

SplitSpec stratified_split(const io::LabelMap& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split: fraction must lie in (0, 1)");
  const int k = labels.max_label();
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < labels.pixels(); ++i) {
    const auto l = labels.labels[static_cast<std::size_t>(i)];
    if (l != 0) by_class[l - 1u].push_back(i);
  }
  SplitSpec s;
  s.fraction = fraction;
  s.seed = seed;
  s.train.resize(static_cast<std::size_t>(k));
  s.test.resize(static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed);
  for (int c = 0; c < k; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.empty()) {
      warn("empty-class", "class " + std::to_string(c + 1) + " has no labeled pixels; skipped in split");
      continue;
    }
    // Fisher-Yates with an explicit distribution so the order is stable.
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> d(0, i);
      std::swap(idx[i], idx[d(rng)]);
    }
    const auto n = static_cast<std::int64_t>(idx.size());
    const std::int64_t ntrain = std::max<std::int64_t>(1, std::llround(fraction * static_cast<double>(n)));
    s.train[static_cast<std::size_t>(c)].assign(idx.begin(), idx.begin() + ntrain);
    s.test[static_cast<std::size_t>(c)].assign(idx.begin() + ntrain, idx.end());
  }
  return s;
}

}  // namespace hyspec::preprocess
