#include "hyspec/io/hsi_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>

namespace hyspec::io {
namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kCubeHeader = 24;
constexpr std::size_t kLabelHeader = 16;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    v = to_le(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void put_bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void flush(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw IoError("write failed for " + path.string());
  }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  template <typename U>
  U get(const char* what) {
    if (pos_ + sizeof(U) > buf_.size()) throw FormatError(std::string("truncated ") + what, pos_);
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_le(v);
  }
  void expect_magic(const char* magic) {
    if (buf_.size() < 4 || std::memcmp(buf_.data(), magic, 4) != 0) {
      throw FormatError(std::string("bad magic, expected \"") + magic + "\"", 0);
    }
    pos_ = 4;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

void check_dims(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t elem, std::size_t offset) {
  if (h == 0 || w == 0 || c == 0) throw FormatError("zero dimension in header", offset);
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  if (h > max / w || h * w > max / c || h * w * c > max / elem) throw FormatError("dimension overflow", offset);
}

}  // namespace

void HsiCube::validate() const {
  if (height <= 0 || width <= 0 || bands <= 0) throw ShapeError("cube dims must be positive");
  if (static_cast<std::int64_t>(values.size()) != height * width * bands) {
    throw ShapeError("cube value count does not match dims");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NumericError("non-finite cube value at element " + std::to_string(i));
  }
}

int LabelMap::max_label() const {
  int m = 0;
  for (auto l : labels) m = std::max(m, static_cast<int>(l));
  return m;
}

void check_pairing(const HsiCube& cube, const LabelMap& labels) {
  if (cube.height != labels.height || cube.width != labels.width) {
    throw PairingError("label map " + std::to_string(labels.height) + "x" + std::to_string(labels.width) +
                       " does not match cube " + std::to_string(cube.height) + "x" + std::to_string(cube.width));
  }
}

void write_cube(const std::filesystem::path& path, const HsiCube& cube) {
  cube.validate();
  Writer w;
  w.reserve(kCubeHeader + static_cast<std::size_t>(cube.values.size()) * 4);
  w.put_bytes("HSIC", 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.bands));
  w.put<std::uint8_t>(kDtypeF32);
  w.put_bytes("\0\0\0", 3);
  for (std::int64_t c = 0; c < cube.bands; ++c) {
    for (std::int64_t p = 0; p < cube.pixels(); ++p) {
      const auto f = static_cast<float>(cube.values[static_cast<std::size_t>(p * cube.bands + c)]);
      w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(f));
    }
  }
  w.flush(path);
}

HsiCube read_cube(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("HSIC");
  const std::size_t vpos = r.pos();
  if (r.get<std::uint32_t>("version") != kVersion) throw FormatError("unsupported HSIC version", vpos);
  const std::size_t dpos = r.pos();
  const std::uint64_t h = r.get<std::uint32_t>("header");
  const std::uint64_t w = r.get<std::uint32_t>("header");
  const std::uint64_t c = r.get<std::uint32_t>("header");
  check_dims(h, w, c, 4, dpos);
  const std::size_t tpos = r.pos();
  if (r.get<std::uint8_t>("header") != kDtypeF32) throw FormatError("unsupported dtype", tpos);
  if (r.remaining() < 3) throw FormatError("truncated header", r.pos());
  r.skip(3);
  const std::uint64_t n = h * w * c;
  if (r.remaining() < n * 4) throw FormatError("truncated payload", r.pos() + r.remaining());
  HsiCube cube(static_cast<std::int64_t>(h), static_cast<std::int64_t>(w), static_cast<std::int64_t>(c));
  const auto pixels = static_cast<std::int64_t>(h * w);
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    for (std::int64_t p = 0; p < pixels; ++p) {
      const std::size_t at = r.pos();
      const float f = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
      if (!std::isfinite(f)) throw FormatError("non-finite value in payload", at);
      cube.values[static_cast<std::size_t>(p * cube.bands + b)] = f;
    }
  }
  return cube;
}

void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
  if (labels.height <= 0 || labels.width <= 0 ||
      static_cast<std::int64_t>(labels.labels.size()) != labels.pixels()) {
    throw ShapeError("label map dims do not match its contents");
  }
  Writer w;
  w.put_bytes("HSIL", 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(labels.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(labels.width));
  for (auto l : labels.labels) w.put<std::uint16_t>(l);
  w.flush(path);
}

LabelMap read_labels(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("HSIL");
  const std::size_t vpos = r.pos();
  if (r.get<std::uint32_t>("version") != kVersion) throw FormatError("unsupported HSIL version", vpos);
  const std::size_t dpos = r.pos();
  const std::uint64_t h = r.get<std::uint32_t>("header");
  const std::uint64_t w = r.get<std::uint32_t>("header");
  check_dims(h, w, 1, 2, dpos);
  if (r.remaining() < h * w * 2) throw FormatError("truncated payload", r.pos() + r.remaining());
  LabelMap lm(static_cast<std::int64_t>(h), static_cast<std::int64_t>(w));
  for (auto& l : lm.labels) l = r.get<std::uint16_t>("payload");
  return lm;
}

Interleave parse_interleave(const std::string& s) {
  if (s == "bsq") return Interleave::kBsq;
  if (s == "bip") return Interleave::kBip;
  if (s == "bil") return Interleave::kBil;
  throw ConfigError("unknown interleave '" + s + "' (expected bsq, bip or bil)");
}

HsiCube convert_raw(const std::filesystem::path& raw, std::int64_t height, std::int64_t width, std::int64_t bands,
                    Interleave interleave) {
  if (height <= 0 || width <= 0 || bands <= 0) throw ConfigError("convert: dims must be positive");
  Reader r(raw);
  const auto n = static_cast<std::uint64_t>(height * width * bands);
  if (r.remaining() != n * 4) {
    throw FormatError("raw stream holds " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(n * 4),
                      0);
  }
  HsiCube cube(height, width, bands);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::size_t at = r.pos();
    const float f = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
    if (!std::isfinite(f)) throw FormatError("non-finite value in raw stream", at);
    const auto k = static_cast<std::int64_t>(i);
    std::int64_t h, w, c;
    switch (interleave) {
      case Interleave::kBsq:
        c = k / (height * width), h = (k / width) % height, w = k % width;
        break;
      case Interleave::kBip:
        h = k / (width * bands), w = (k / bands) % width, c = k % bands;
        break;
      case Interleave::kBil:
      default:
        h = k / (bands * width), c = (k / width) % bands, w = k % width;
        break;
    }
    cube.at(h, w, c) = f;
  }
  return cube;
}

// ------------------------------------------------------------------ synthetic scene

SynthScene synth_scene(const SynthSpec& spec) {
  if (spec.height <= 0 || spec.width <= 0 || spec.bands <= 0) throw ConfigError("synth: dims must be positive");
  if (spec.classes < 1) throw ConfigError("synth: need at least one class");
  if (spec.classes > spec.height * spec.width) {
    throw ConfigError("synth: " + std::to_string(spec.classes) + " classes exceed " +
                      std::to_string(spec.height * spec.width) + " pixels");
  }
  if (spec.classes > 65535) throw ConfigError("synth: class ids must fit in 16 bits");
  if (spec.noise_sigma < 0) throw ConfigError("synth: noise_sigma must be non-negative");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  // Class mean spectra: random low-order Fourier mixtures, unit-normalized,
  // rejected until pairwise distances are at least 1.
  constexpr int kHarmonics = 6;
  constexpr int kMaxTries = 2000;
  const auto k = static_cast<std::size_t>(spec.classes);
  const auto nb = static_cast<std::size_t>(spec.bands);
  std::vector<std::vector<double>> means;
  means.reserve(k);
  while (means.size() < k) {
    bool placed = false;
    for (int t = 0; t < kMaxTries && !placed; ++t) {
      std::vector<double> m(nb, 0.0);
      for (int j = 0; j <= kHarmonics; ++j) {
        const double amp = normal(rng) / (1.0 + j);
        const double ph = phase(rng);
        for (std::size_t b = 0; b < nb; ++b) {
          const double lam = nb > 1 ? static_cast<double>(b) / static_cast<double>(nb - 1) : 0.0;
          m[b] += amp * std::cos(std::numbers::pi * j * lam + ph);
        }
      }
      double norm = 0.0;
      for (double v : m) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-12) continue;
      for (double& v : m) v /= norm;
      bool ok = true;
      for (const auto& o : means) {
        double d = 0.0;
        for (std::size_t b = 0; b < nb; ++b) d += (m[b] - o[b]) * (m[b] - o[b]);
        if (std::sqrt(d) < 1.0) {
          ok = false;
          break;
        }
      }
      if (ok) {
        means.push_back(std::move(m));
        placed = true;
      }
    }
    if (!placed) {
      throw ConfigError("synth: could not place " + std::to_string(k) + " class spectra at distance >= 1 in " +
                        std::to_string(nb) + " bands");
    }
  }

  // Distinct anchor pixels, then nearest-anchor labeling (ties -> lower class).
  const std::int64_t npx = spec.height * spec.width;
  std::vector<std::int64_t> anchors;
  {
    std::set<std::int64_t> used;
    std::uniform_int_distribution<std::int64_t> pick(0, npx - 1);
    while (anchors.size() < k) {
      const std::int64_t a = pick(rng);
      if (used.insert(a).second) anchors.push_back(a);
    }
  }
  SynthScene scene;
  scene.labels = LabelMap(spec.height, spec.width);
  scene.cube = HsiCube(spec.height, spec.width, spec.bands);
  for (std::int64_t h = 0; h < spec.height; ++h) {
    for (std::int64_t w = 0; w < spec.width; ++w) {
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      std::size_t cls = 0;
      for (std::size_t a = 0; a < k; ++a) {
        const std::int64_t dh = h - anchors[a] / spec.width;
        const std::int64_t dw = w - anchors[a] % spec.width;
        const std::int64_t d = dh * dh + dw * dw;
        if (d < best) {
          best = d;
          cls = a;
        }
      }
      scene.labels.at(h, w) = static_cast<std::uint16_t>(cls + 1);
      for (std::size_t b = 0; b < nb; ++b) {
        scene.cube.at(h, w, static_cast<std::int64_t>(b)) = means[cls][b] + spec.noise_sigma * normal(rng);
      }
    }
  }
  scene.class_means = std::move(means);
  return scene;
}

// ------------------------------------------------------------------ palette / PPM

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  double r, g, b;
  switch (static_cast<int>(i) % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  auto q8 = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
  return {q8(r), q8(g), q8(b)};
}

}  // namespace

Palette Palette::make(int classes, std::uint64_t seed) {
  if (classes < 0) throw ConfigError("palette: negative class count");
  std::mt19937_64 rng(seed);
  const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  constexpr double kGolden = 0.6180339887498949;
  Palette p;
  for (int i = 0; i < classes; ++i) {
    double hue = std::fmod(offset + i * kGolden, 1.0);
    const double sat = 0.55 + 0.45 * ((i % 3) / 2.0);
    const double val = 0.95 - 0.3 * ((i / 3) % 2);
    Rgb c = hsv_to_rgb(hue, sat, val);
    // Nudge hue until the color is unique and not black.
    for (int guard = 0; guard < 4096 && (std::find(p.colors_.begin(), p.colors_.end(), c) != p.colors_.end() ||
                                         c == Rgb{0, 0, 0});
         ++guard) {
      hue = std::fmod(hue + 0.0137, 1.0);
      c = hsv_to_rgb(hue, sat, val);
    }
    p.colors_.push_back(c);
  }
  return p;
}

Rgb Palette::color(std::uint16_t label) const {
  if (label == 0) return {0, 0, 0};
  if (label > colors_.size()) throw IndexError("palette has no color for label " + std::to_string(label));
  return colors_[label - 1u];
}

std::string ppm_header(std::int64_t height, std::int64_t width) {
  return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

void emit_class_map(const LabelMap& labels, const Palette& palette, const std::filesystem::path& path) {
  if (static_cast<std::int64_t>(labels.labels.size()) != labels.pixels() || labels.pixels() == 0) {
    throw ShapeError("label map dims do not match its contents");
  }
  std::string out = ppm_header(labels.height, labels.width);
  out.reserve(out.size() + static_cast<std::size_t>(labels.pixels()) * 3);
  for (auto l : labels.labels) {
    const Rgb c = palette.color(l);
    out.push_back(static_cast<char>(c.r));
    out.push_back(static_cast<char>(c.g));
    out.push_back(static_cast<char>(c.b));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace hyspec::io
