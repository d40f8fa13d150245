#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hyspec/io/hsi_io.hpp"

namespace hyspec::preprocess {

inline constexpr double kEigenFloor = 1e-8;

// Principal axes of a cube's spectra. `components` is C_raw x k stored
// column-major (component j occupies [j * C_raw, (j + 1) * C_raw)).
struct PcaModel {
  std::int64_t raw_bands = 0;
  std::int64_t k = 0;
  std::vector<double> mean;
  std::vector<double> components;
  std::vector<double> eigenvalues;  // descending

  double component(std::int64_t band, std::int64_t j) const {
    return components[static_cast<std::size_t>(j * raw_bands + band)];
  }
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. `a` is n x n
// row-major and symmetric. Returns eigenvalues (descending) and eigenvectors
// as columns of an n x n row-major matrix, each with its largest-magnitude
// entry made positive.
struct SymEigen {
  std::vector<double> values;
  std::vector<double> vectors;
};
SymEigen jacobi_eigen(std::vector<double> a, std::int64_t n);

// Sample covariance with divisor HW - 1, then the top-k eigenpairs.
PcaModel fit_pca(const io::HsiCube& cube, std::int64_t k);

// (X - mu) V_k Lambda_k^{-1/2}, eigenvalues floored at kEigenFloor.
io::HsiCube apply_pca_whiten(const io::HsiCube& cube, const PcaModel& model);

// HSIP: "HSIP" | u32 C_raw | u32 k | mu | V_k column-major | Lambda_k, f64 LE.
void save_pca(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_pca(const std::filesystem::path& path);

enum class PatchMode { kPerPixel, kNonOverlap };
PatchMode parse_patch_mode(const std::string& s);
const char* patch_mode_name(PatchMode m);

struct Patch {
  std::vector<float> data;  // bands x p x p, channel-first
  std::uint16_t label = 0;
  std::int64_t row = 0;  // center pixel (per_pixel) or tile origin (non_overlap)
  std::int64_t col = 0;
};

// Mirror index into [0, n) without repeating the edge sample.
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

// Writes the reflect-padded p x p patch centered on (row, col) into `out`
// (bands * p * p floats, channel-first).
void extract_patch(const io::HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t p,
                   std::span<float> out);

// per_pixel: one centered patch per labeled pixel, row-major order.
// non_overlap: floor(H/p) x floor(W/p) tiles labeled by majority of their
// labeled pixels; tiles without labels are dropped.
std::vector<Patch> extract_patches(const io::HsiCube& cube, const io::LabelMap& labels, std::int64_t p,
                                   PatchMode mode);

// Per-class pixel indices (row-major flat index), class k at position k-1.
struct SplitSpec {
  double fraction = 0.1;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::int64_t>> train;
  std::vector<std::vector<std::int64_t>> test;

  std::int64_t train_count() const;
  std::int64_t test_count() const;
};

// n_train = max(1, round(fraction * n_c)) per non-empty class, chosen by a
// seeded shuffle. Empty classes are skipped with a warning.
SplitSpec stratified_split(const io::LabelMap& labels, double fraction, std::uint64_t seed);

}  // namespace hyspec::preprocess
