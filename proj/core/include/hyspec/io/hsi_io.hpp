#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyspec/error.hpp"

namespace hyspec::io {

// H x W x C reflectance cube, stored pixel-interleaved in memory
// (index (h * W + w) * C + c). Files use band-sequential order.
struct HsiCube {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t bands = 0;
  std::vector<double> values;

  HsiCube() = default;
  HsiCube(std::int64_t h, std::int64_t w, std::int64_t c)
      : height(h), width(w), bands(c), values(static_cast<std::size_t>(h * w * c), 0.0) {}

  std::int64_t pixels() const noexcept { return height * width; }
  double& at(std::int64_t h, std::int64_t w, std::int64_t c) {
    return values[static_cast<std::size_t>((h * width + w) * bands + c)];
  }
  double at(std::int64_t h, std::int64_t w, std::int64_t c) const {
    return values[static_cast<std::size_t>((h * width + w) * bands + c)];
  }
  const double* pixel(std::int64_t idx) const { return values.data() + idx * bands; }

  // Throws NumericError on non-finite values, ShapeError on bad dims.
  void validate() const;
};

// H x W raster of class ids, row-major; 0 = unlabeled, classes 1..K.
struct LabelMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint16_t> labels;

  LabelMap() = default;
  LabelMap(std::int64_t h, std::int64_t w) : height(h), width(w), labels(static_cast<std::size_t>(h * w), 0) {}

  std::uint16_t& at(std::int64_t h, std::int64_t w) { return labels[static_cast<std::size_t>(h * width + w)]; }
  std::uint16_t at(std::int64_t h, std::int64_t w) const { return labels[static_cast<std::size_t>(h * width + w)]; }
  std::int64_t pixels() const noexcept { return height * width; }
  // Largest label present (the class count K for dense 1..K labelings).
  int max_label() const;
};

// Throws PairingError when cube and labels cover different rasters.
void check_pairing(const HsiCube& cube, const LabelMap& labels);

// HSIC: "HSIC" | u32 version=1 | u32 H | u32 W | u32 C | u8 dtype=1 | 3 reserved
//       | H*W*C little-endian f32, band-sequential.
void write_cube(const std::filesystem::path& path, const HsiCube& cube);
HsiCube read_cube(const std::filesystem::path& path);

// HSIL: "HSIL" | u32 version=1 | u32 H | u32 W | H*W little-endian u16 row-major.
void write_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_labels(const std::filesystem::path& path);

enum class Interleave { kBsq, kBip, kBil };
Interleave parse_interleave(const std::string& s);

// Headerless little-endian f32 stream with the given dims and interleave.
HsiCube convert_raw(const std::filesystem::path& raw, std::int64_t height, std::int64_t width, std::int64_t bands,
                    Interleave interleave);

struct SynthSpec {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t bands = 40;
  int classes = 9;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct SynthScene {
  HsiCube cube;
  LabelMap labels;
  // Unit-norm generating mean spectrum per class (index k-1 for class k).
  std::vector<std::vector<double>> class_means;
};

// Voronoi regions around seeded anchor pixels, one per class; each class has
// a smooth unit-norm Fourier-mixture spectrum (pairwise L2 distance >= 1);
// pixel = class mean + N(0, noise_sigma^2) per band.
SynthScene synth_scene(const SynthSpec& spec);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class Palette {
 public:
  static Palette make(int classes, std::uint64_t seed);
  // Label 0 maps to black.
  Rgb color(std::uint16_t label) const;
  int size() const noexcept { return static_cast<int>(colors_.size()); }
  const std::vector<Rgb>& colors() const noexcept { return colors_; }

 private:
  std::vector<Rgb> colors_;
};

// Binary P6, maxval 255, H rows x W cols.
void emit_class_map(const LabelMap& labels, const Palette& palette, const std::filesystem::path& path);
std::string ppm_header(std::int64_t height, std::int64_t width);

}  // namespace hyspec::io
