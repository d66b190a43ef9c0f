#include "core/hsi.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/log.hpp"

namespace peft {

std::size_t HsiCube::class_count() const {
  std::size_t k = 0;
  for (auto l : labels) k = std::max<std::size_t>(k, l);
  return k;
}

void HsiCube::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw DataError("cube dimensions must be positive");
  if (reflectance.shape() != Shape{height, width, bands})
    throw DataError("cube reflectance shape " + shape_to_string(reflectance.shape()) +
                    " does not match header");
  if (labels.size() != height * width) throw DataError("label raster size does not match cube");
  if (!all_finite(reflectance)) throw DataError("cube contains non-finite reflectance values");
  const std::size_t k = class_count();
  std::vector<bool> seen(k + 1, false);
  for (auto l : labels) seen[l] = true;
  for (std::size_t c = 1; c <= k; ++c)
    if (!seen[c])
      throw DataError("label ids are not contiguous: class " + std::to_string(c) + " of " +
                      std::to_string(k) + " has no pixels");
}

PcaResult pca_reduce(const HsiCube& cube, std::size_t n_components) {
  const std::size_t b = cube.bands, n = cube.height * cube.width;
  if (b < n_components)
    throw DataError("PCA needs at least " + std::to_string(n_components) + " bands, cube has " +
                    std::to_string(b));
  if (n == 0) throw DataError("PCA on an empty cube");

  std::vector<double> mean(b, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = cube.reflectance.raw() + i * b;
    for (std::size_t j = 0; j < b; ++j) mean[j] += px[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
  Eigen::VectorXd centered(static_cast<Eigen::Index>(b));
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = cube.reflectance.raw() + i * b;
    for (std::size_t j = 0; j < b; ++j) centered[static_cast<Eigen::Index>(j)] = px[j] - mean[j];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n);

  const double total = cov.trace();
  double scale_ref = 1.0;
  for (auto m : mean) scale_ref += m * m;
  if (!(total > 1e-12 * scale_ref)) throw DataError("PCA: cube has zero variance");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("PCA: eigendecomposition failed");
  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& evecs = solver.eigenvectors();

  PcaResult result;
  result.mean = mean;
  result.components = Tensor64({b, n_components});
  for (std::size_t k = 0; k < n_components; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(b - 1 - k);
    Eigen::VectorXd v = evecs.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (std::size_t j = 0; j < b; ++j) result.components.at(j, k) = v[static_cast<Eigen::Index>(j)];
    result.explained_variance_ratio.push_back(std::max(0.0, evals[col]) / total);
  }

  HsiCube& out = result.cube;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = n_components;
  out.labels = cube.labels;
  out.reflectance = Tensor({cube.height, cube.width, n_components});
  std::vector<double> c(b);
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = cube.reflectance.raw() + i * b;
    for (std::size_t j = 0; j < b; ++j) c[j] = px[j] - mean[j];
    float* dst = out.reflectance.raw() + i * n_components;
    for (std::size_t k = 0; k < n_components; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < b; ++j) s += c[j] * result.components.at(j, k);
      dst[k] = static_cast<float>(s);
    }
  }
  return result;
}

std::size_t mirror_index(long long i, std::size_t n) {
  const long long len = static_cast<long long>(n);
  if (len == 1) return 0;
  const long long period = 2 * len;
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < len ? m : period - 1 - m);
}

Tensor extract_patch(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t patch_size) {
  if (patch_size == 0 || patch_size % 2 == 0)
    throw ConfigError("patch size must be odd, got " + std::to_string(patch_size));
  if (row >= cube.height || col >= cube.width) throw DataError("patch center outside the cube");
  const long long half = static_cast<long long>(patch_size / 2);
  const std::size_t b = cube.bands;
  Tensor patch({patch_size, patch_size, b});
  float* dst = patch.raw();
  for (std::size_t i = 0; i < patch_size; ++i) {
    const std::size_t r = mirror_index(static_cast<long long>(row) - half + static_cast<long long>(i), cube.height);
    for (std::size_t j = 0; j < patch_size; ++j) {
      const std::size_t c = mirror_index(static_cast<long long>(col) - half + static_cast<long long>(j), cube.width);
      const float* src = cube.pixel(r, c);
      std::copy(src, src + b, dst);
      dst += b;
    }
  }
  return patch;
}

Tensor resize_bilinear(const Tensor& patch, std::size_t out_size) {
  if (patch.ndim() != 3 || patch.dim(0) != patch.dim(1))
    throw ShapeError("resize_bilinear: expected a square P×P×B patch, got " +
                     shape_to_string(patch.shape()));
  const std::size_t p = patch.dim(0), b = patch.dim(2);
  if (p == out_size) return patch;

  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  std::vector<Tap> taps(out_size);
  const double ratio = static_cast<double>(p) / static_cast<double>(out_size);
  for (std::size_t d = 0; d < out_size; ++d) {
    double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(p - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, p - 1);
    taps[d] = {i0, i1, s - static_cast<double>(i0)};
  }
  Tensor out({out_size, out_size, b});
  for (std::size_t y = 0; y < out_size; ++y) {
    const Tap& ty = taps[y];
    for (std::size_t x = 0; x < out_size; ++x) {
      const Tap& tx = taps[x];
      const float* p00 = patch.raw() + (ty.i0 * p + tx.i0) * b;
      const float* p01 = patch.raw() + (ty.i0 * p + tx.i1) * b;
      const float* p10 = patch.raw() + (ty.i1 * p + tx.i0) * b;
      const float* p11 = patch.raw() + (ty.i1 * p + tx.i1) * b;
      float* dst = out.raw() + (y * out_size + x) * b;
      for (std::size_t k = 0; k < b; ++k) {
        const double top = p00[k] + tx.w1 * (p01[k] - p00[k]);
        const double bot = p10[k] + tx.w1 * (p11[k] - p10[k]);
        dst[k] = static_cast<float>(top + ty.w1 * (bot - top));
      }
    }
  }
  return out;
}

NormStats standardize_stats(std::span<const Tensor> patches) {
  if (patches.empty()) throw DataError("standardization needs at least one training patch");
  const std::size_t b = patches.front().shape().back();
  std::vector<double> sum(b, 0.0), sq(b, 0.0);
  std::size_t count = 0;
  for (const Tensor& t : patches) {
    if (t.shape().back() != b) throw ShapeError("standardize_stats: band count differs between patches");
    const std::size_t pixels = t.size() / b;
    for (std::size_t i = 0; i < pixels; ++i)
      for (std::size_t k = 0; k < b; ++k) {
        const double v = t[i * b + k];
        sum[k] += v;
        sq[k] += v * v;
      }
    count += pixels;
  }
  NormStats s{NormMode::Standardize, std::vector<double>(b), std::vector<double>(b)};
  for (std::size_t k = 0; k < b; ++k) {
    const double mean = sum[k] / static_cast<double>(count);
    const double var = std::max(0.0, sq[k] / static_cast<double>(count) - mean * mean);
    s.center[k] = mean;
    s.scale[k] = std::sqrt(var);
    if (!(s.scale[k] > 1e-12 * (1.0 + std::abs(mean))))
      throw DataError("band " + std::to_string(k) + " has zero standard deviation");
  }
  return s;
}

NormStats user_standardize_stats(std::vector<double> mean, std::vector<double> std) {
  if (mean.size() != std.size() || mean.empty())
    throw ConfigError("normalization mean and std vectors must have the same non-zero length");
  for (std::size_t k = 0; k < std.size(); ++k)
    if (!(std[k] > 0.0)) throw ConfigError("band " + std::to_string(k) + " has zero standard deviation");
  return {NormMode::Standardize, std::move(mean), std::move(std)};
}

NormStats minmax_stats(const HsiCube& cube) {
  const std::size_t b = cube.bands, n = cube.height * cube.width;
  std::vector<double> lo(b, std::numeric_limits<double>::infinity());
  std::vector<double> hi(b, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = cube.reflectance.raw() + i * b;
    for (std::size_t k = 0; k < b; ++k) {
      lo[k] = std::min<double>(lo[k], px[k]);
      hi[k] = std::max<double>(hi[k], px[k]);
    }
  }
  NormStats s{NormMode::MinMax, lo, std::vector<double>(b)};
  for (std::size_t k = 0; k < b; ++k) {
    s.scale[k] = hi[k] - lo[k];
    if (!(s.scale[k] > 0.0)) throw DataError("band " + std::to_string(k) + " is constant (max == min)");
  }
  return s;
}

Tensor normalize(const Tensor& patch, const NormStats& stats) {
  const std::size_t b = patch.shape().back();
  if (stats.center.size() != b)
    throw ShapeError("normalize: stats cover " + std::to_string(stats.center.size()) +
                     " bands, patch has " + std::to_string(b));
  Tensor out(patch.shape());
  for (std::size_t i = 0; i < patch.size(); ++i) {
    const std::size_t k = i % b;
    out[i] = static_cast<float>((patch[i] - stats.center[k]) / stats.scale[k]);
  }
  return out;
}

Tensor flip_horizontal(const Tensor& patch) {
  const std::size_t h = patch.dim(0), w = patch.dim(1), b = patch.dim(2);
  Tensor out(patch.shape());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const float* src = patch.raw() + (r * w + c) * b;
      std::copy(src, src + b, out.raw() + (r * w + (w - 1 - c)) * b);
    }
  return out;
}

Tensor flip_vertical(const Tensor& patch) {
  const std::size_t h = patch.dim(0), w = patch.dim(1), b = patch.dim(2);
  Tensor out(patch.shape());
  for (std::size_t r = 0; r < h; ++r) {
    const float* src = patch.raw() + r * w * b;
    std::copy(src, src + w * b, out.raw() + (h - 1 - r) * w * b);
  }
  return out;
}

Tensor augment(const Tensor& patch, std::span<const Tensor* const> same_class, Rng& rng,
               const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const bool hflip = coin(rng) < cfg.hflip_prob;
  const bool vflip = coin(rng) < cfg.vflip_prob;
  const bool radiation = coin(rng) < cfg.radiation_prob;
  const bool mixture = coin(rng) < cfg.mixture_prob && !same_class.empty();

  Tensor out = patch;
  if (hflip) out = flip_horizontal(out);
  if (vflip) out = flip_vertical(out);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  if (radiation) {
    std::uniform_real_distribution<double> alpha_dist(cfg.radiation_alpha_min, cfg.radiation_alpha_max);
    const double alpha = alpha_dist(rng);
    for (auto& v : out.data()) v = static_cast<float>(alpha * v + noise(rng));
  }
  if (mixture) {
    std::uniform_int_distribution<std::size_t> pick(0, same_class.size() - 1);
    const Tensor& other = *same_class[pick(rng)];
    require_same_shape(other.shape(), out.shape(), "mixture noise");
    const double w = cfg.mixture_self_weight;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>(w * out[i] + (1.0 - w) * other[i] + noise(rng));
  }
  return out;
}

std::size_t SplitTable::train_size() const {
  std::size_t n = 0;
  for (const auto& c : train) n += c.size();
  return n;
}

std::size_t SplitTable::test_size() const {
  std::size_t n = 0;
  for (const auto& c : test) n += c.size();
  return n;
}

void SplitTable::validate(const HsiCube& cube) const {
  if (train.size() != test.size()) throw DataError("split: train/test class counts differ");
  std::vector<std::uint8_t> used(cube.height * cube.width, 0);
  for (int part = 0; part < 2; ++part) {
    const auto& table = part == 0 ? train : test;
    for (std::size_t c = 0; c < table.size(); ++c)
      for (const PixelCoord& p : table[c]) {
        if (p.row >= cube.height || p.col >= cube.width)
          throw DataError("split: coordinate outside the cube");
        if (cube.label(p.row, p.col) != c + 1)
          throw DataError("split: pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                          ") is not labeled class " + std::to_string(c + 1));
        auto& u = used[p.row * cube.width + p.col];
        if (u) throw DataError("split: pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                               ") listed twice");
        u = 1;
      }
  }
}

SplitTable build_split(const HsiCube& cube, std::span<const std::size_t> per_class_train,
                       std::uint64_t seed) {
  const std::size_t k = cube.class_count();
  if (k == 0) throw DataError("split: cube has no labeled pixels");
  if (per_class_train.size() != 1 && per_class_train.size() != k)
    throw ConfigError("split: expected 1 or " + std::to_string(k) + " per-class train counts, got " +
                      std::to_string(per_class_train.size()));
  std::vector<std::vector<PixelCoord>> by_class(k);
  for (std::uint32_t r = 0; r < cube.height; ++r)
    for (std::uint32_t c = 0; c < cube.width; ++c)
      if (auto l = cube.label(r, c)) by_class[l - 1].push_back({r, c});

  SplitTable split;
  split.train.resize(k);
  split.test.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t want = per_class_train.size() == 1 ? per_class_train[0] : per_class_train[c];
    auto& pool = by_class[c];
    if (pool.size() < want)
      throw DataError("class " + std::to_string(c + 1) + " has " + std::to_string(pool.size()) +
                      " labeled pixels, fewer than the requested " + std::to_string(want));
    Rng rng = keyed_rng(seed, 0x5151, c);
    // Partial Fisher-Yates: the first `want` slots become the training sample.
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    split.train[c].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
    split.test[c].assign(pool.begin() + static_cast<std::ptrdiff_t>(want), pool.end());
    std::sort(split.test[c].begin(), split.test[c].end());
    if (split.test[c].empty())
      log_warning("class " + std::to_string(c + 1) + " has no test pixels left after the split");
  }
  return split;
}

HsiCube synth_cube(std::size_t height, std::size_t width, std::size_t bands, std::size_t classes,
                   double noise_std, std::uint64_t seed) {
  if (height == 0 || width == 0 || bands == 0) throw ConfigError("synth: dimensions must be positive");
  if (classes == 0 || classes > 64) throw ConfigError("synth: class count must be in [1, 64]");
  if (classes > height * width) throw ConfigError("synth: more classes than pixels");
  if (!(noise_std >= 0.0)) throw ConfigError("synth: noise_std must be non-negative");
  Rng rng = keyed_rng(seed, 0x5EED);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Smooth signatures: a base level plus three Gaussian bumps along the bands.
  std::vector<std::vector<float>> signature(classes, std::vector<float>(bands));
  for (auto& sig : signature) {
    const double base = 0.2 + 0.6 * u01(rng);
    double center[3], width_b[3], amp[3];
    for (int j = 0; j < 3; ++j) {
      center[j] = u01(rng) * static_cast<double>(bands);
      width_b[j] = static_cast<double>(bands) * (0.1 + 0.15 * u01(rng));
      amp[j] = 0.6 * u01(rng) - 0.3;
    }
    for (std::size_t b = 0; b < bands; ++b) {
      double v = base;
      for (int j = 0; j < 3; ++j) {
        const double z = (static_cast<double>(b) - center[j]) / width_b[j];
        v += amp[j] * std::exp(-0.5 * z * z);
      }
      sig[b] = static_cast<float>(v);
    }
  }

  // Distinct Voronoi sites; ties go to the lower class id.
  std::vector<std::size_t> cells(height * width);
  std::iota(cells.begin(), cells.end(), 0);
  for (std::size_t i = 0; i < classes; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
    std::swap(cells[i], cells[pick(rng)]);
  }
  HsiCube cube;
  cube.height = height;
  cube.width = width;
  cube.bands = bands;
  cube.labels.resize(height * width);
  cube.reflectance = Tensor({height, width, bands});
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      std::size_t best = 0;
      long long best_d = -1;
      for (std::size_t k = 0; k < classes; ++k) {
        const long long dr = static_cast<long long>(cells[k] / width) - static_cast<long long>(r);
        const long long dc = static_cast<long long>(cells[k] % width) - static_cast<long long>(c);
        const long long d = dr * dr + dc * dc;
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = k;
        }
      }
      cube.labels[r * width + c] = static_cast<std::uint16_t>(best + 1);
      float* px = cube.reflectance.raw() + (r * width + c) * bands;
      for (std::size_t b = 0; b < bands; ++b)
        px[b] = noise_std > 0.0 ? static_cast<float>(signature[best][b] + noise(rng)) : signature[best][b];
    }
  return cube;
}

}  // namespace peft
