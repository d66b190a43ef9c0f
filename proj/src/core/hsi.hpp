#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace peft {

// H×W×B reflectance cube (pixel-major, band-fastest) with an H×W label
// raster; label 0 marks unlabeled pixels.
struct HsiCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  Tensor reflectance;
  std::vector<std::uint16_t> labels;

  std::uint16_t label(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  const float* pixel(std::size_t row, std::size_t col) const {
    return reflectance.raw() + (row * width + col) * bands;
  }
  // Largest label id, i.e. K when ids are contiguous.
  std::size_t class_count() const;
  // Throws DataError when shapes disagree, values are not finite, or label
  // ids are not contiguous 1..K.
  void validate() const;
};

struct PcaResult {
  HsiCube cube;
  // Fraction of total variance carried by each kept component, descending.
  std::vector<double> explained_variance_ratio;
  std::vector<double> mean;     // per input band
  Tensor64 components;          // bands × n_components, columns are eigenvectors
};

// Projects every pixel onto the top principal axes of the band covariance.
// Each eigenvector is signed so that its largest-magnitude entry is positive.
PcaResult pca_reduce(const HsiCube& cube, std::size_t n_components = 12);

// P×P×B window centered on (row, col). Out-of-range coordinates are
// mirrored about the border (edge pixel repeated: -1 → 0, -2 → 1).
Tensor extract_patch(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t patch_size);
std::size_t mirror_index(long long i, std::size_t n);

// Per-band bilinear resize with half-pixel centers:
// src = (dst + 0.5)·P/out − 0.5, clamped to [0, P−1].
Tensor resize_bilinear(const Tensor& patch, std::size_t out_size = 32);

enum class NormMode { Standardize, MinMax };

struct NormStats {
  NormMode mode = NormMode::Standardize;
  std::vector<double> center;  // mean (standardize) or min (minmax)
  std::vector<double> scale;   // std (standardize) or max − min (minmax)
};

NormStats standardize_stats(std::span<const Tensor> patches);
NormStats user_standardize_stats(std::vector<double> mean, std::vector<double> std);
NormStats minmax_stats(const HsiCube& cube);
Tensor normalize(const Tensor& patch, const NormStats& stats);

struct AugmentConfig {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double radiation_prob = 0.5;
  double radiation_alpha_min = 0.9;
  double radiation_alpha_max = 1.1;
  double noise_std = 1.0 / 25.0;
  double mixture_prob = 0.25;
  double mixture_self_weight = 0.75;
};

Tensor flip_horizontal(const Tensor& patch);
Tensor flip_vertical(const Tensor& patch);

// Random flips plus radiation and mixture noise. same_class holds other
// training patches of the patch's class; mixture is skipped when empty.
Tensor augment(const Tensor& patch, std::span<const Tensor* const> same_class, Rng& rng,
               const AugmentConfig& cfg = {});

struct PixelCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const PixelCoord&) const = default;
  auto operator<=>(const PixelCoord&) const = default;
};

// Index c holds class c + 1.
struct SplitTable {
  std::vector<std::vector<PixelCoord>> train;
  std::vector<std::vector<PixelCoord>> test;

  std::size_t class_count() const { return train.size(); }
  std::size_t train_size() const;
  std::size_t test_size() const;
  // Throws DataError if a coordinate is unlabeled, has the wrong class, or
  // appears in both partitions.
  void validate(const HsiCube& cube) const;
};

// Samples per_class_train[c] training pixels of each class without
// replacement; every other labeled pixel goes to test. A single count is
// applied to every class.
SplitTable build_split(const HsiCube& cube, std::span<const std::size_t> per_class_train,
                       std::uint64_t seed);

// K smooth random spectra, a seeded Voronoi label map over K sites and
// additive Gaussian noise.
HsiCube synth_cube(std::size_t height, std::size_t width, std::size_t bands, std::size_t classes,
                   double noise_std, std::uint64_t seed);

}  // namespace peft
