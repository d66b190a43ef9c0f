#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/errors.hpp"
#include "core/hsi.hpp"
#include "core/hsi_io.hpp"
#include "core/log.hpp"
#include "test_util.hpp"

using namespace peft;
using namespace peft::testing;

namespace {

HsiCube blank_cube(std::size_t h, std::size_t w, std::size_t b) {
  HsiCube c;
  c.height = h;
  c.width = w;
  c.bands = b;
  c.reflectance = Tensor({h, w, b});
  c.labels.assign(h * w, 1);
  return c;
}

// Value encodes (row, col, band) so patches can be checked by index.
HsiCube index_cube(std::size_t h, std::size_t w, std::size_t b) {
  HsiCube c = blank_cube(h, w, b);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t k = 0; k < b; ++k) c.reflectance.at(r, col, k) = static_cast<float>(100 * r + 10 * col + k);
  return c;
}

// Independent bilinear oracle in double.
Tensor64 resize_oracle(const Tensor& patch, std::size_t out) {
  const std::size_t p = patch.dim(0), b = patch.dim(2);
  Tensor64 y({out, out, b});
  auto src = [&](std::size_t d) {
    double s = (static_cast<double>(d) + 0.5) * static_cast<double>(p) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(p - 1));
  };
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t j = 0; j < out; ++j) {
      const double si = src(i), sj = src(j);
      const std::size_t i0 = static_cast<std::size_t>(std::floor(si)), j0 = static_cast<std::size_t>(std::floor(sj));
      const std::size_t i1 = std::min(i0 + 1, p - 1), j1 = std::min(j0 + 1, p - 1);
      const double fi = si - i0, fj = sj - j0;
      for (std::size_t k = 0; k < b; ++k)
        y.at(i, j, k) = (1 - fi) * (1 - fj) * patch.at(i0, j0, k) + (1 - fi) * fj * patch.at(i0, j1, k) +
                        fi * (1 - fj) * patch.at(i1, j0, k) + fi * fj * patch.at(i1, j1, k);
    }
  return y;
}

}  // namespace

TEST_CASE("pca: rank-1 cube puts all variance in the first component") {
  std::mt19937_64 rng(1);
  HsiCube c = blank_cube(10, 12, 20);
  const Tensor64 spectrum = random_tensor<double>({20}, rng, 0.1, 1.0);
  std::uniform_real_distribution<double> amp(0.5, 2.0);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t col = 0; col < 12; ++col) {
      const double a = amp(rng);
      for (std::size_t k = 0; k < 20; ++k) c.reflectance.at(r, col, k) = static_cast<float>(a * spectrum[k]);
    }
  const PcaResult res = pca_reduce(c, 12);
  CHECK(res.cube.bands == 12);
  CHECK(res.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t i = 1; i < 12; ++i) CHECK(res.explained_variance_ratio[i] <= 1e-6);
}

TEST_CASE("pca: rotated 12-dimensional signal is fully captured") {
  std::mt19937_64 rng(2);
  const std::size_t bands = 30, n = 400;
  // Orthonormal 30×12 basis from Gram-Schmidt on random columns.
  Tensor64 q = random_tensor<double>({bands, 12}, rng);
  for (std::size_t j = 0; j < 12; ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < bands; ++k) dot += q.at(k, i) * q.at(k, j);
      for (std::size_t k = 0; k < bands; ++k) q.at(k, j) -= dot * q.at(k, i);
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < bands; ++k) norm += q.at(k, j) * q.at(k, j);
    for (std::size_t k = 0; k < bands; ++k) q.at(k, j) /= std::sqrt(norm);
  }
  HsiCube c = blank_cube(20, 20, bands);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t p = 0; p < n; ++p) {
    double s[12];
    for (std::size_t j = 0; j < 12; ++j) s[j] = z(rng) * (12.0 - j);
    for (std::size_t k = 0; k < bands; ++k) {
      double v = 0.0;
      for (std::size_t j = 0; j < 12; ++j) v += q.at(k, j) * s[j];
      c.reflectance[p * bands + k] = static_cast<float>(v);
    }
  }
  const PcaResult res = pca_reduce(c, 12);
  double sum = 0.0;
  for (double r : res.explained_variance_ratio) sum += r;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::is_sorted(res.explained_variance_ratio.rbegin(), res.explained_variance_ratio.rend()));
  for (std::size_t j = 0; j < 12; ++j) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < bands; ++k)
      if (std::fabs(res.components.at(k, j)) > std::fabs(res.components.at(arg, j))) arg = k;
    CHECK(res.components.at(arg, j) > 0.0);
  }
}

TEST_CASE("pca: degenerate inputs") {
  HsiCube c = blank_cube(4, 4, 16);
  for (auto& v : c.reflectance.data()) v = 0.25f;
  CHECK_THROWS_AS(pca_reduce(c, 12), DataError);
  CHECK_THROWS_AS(pca_reduce(blank_cube(4, 4, 6), 12), DataError);
}

TEST_CASE("patches: center pixel, interior window, mirrored corner") {
  const HsiCube c = index_cube(4, 4, 2);
  const Tensor p1 = extract_patch(c, 2, 1, 1);
  CHECK(p1.shape() == Shape{1, 1, 2});
  CHECK(p1.at(0, 0, 1) == 211.0f);

  const Tensor inner = extract_patch(c, 1, 2, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(inner.at(i, j, 0) == static_cast<float>(100 * i + 10 * (j + 1)));

  // Edge pixel repeated: row/col −1 → 0.
  const Tensor corner = extract_patch(c, 0, 0, 3);
  const float want[3][3] = {{0, 0, 10}, {0, 0, 10}, {100, 100, 110}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(corner.at(i, j, 0) == want[i][j]);

  CHECK(mirror_index(-1, 4) == 0);
  CHECK(mirror_index(-2, 4) == 1);
  CHECK(mirror_index(4, 4) == 3);
  CHECK(mirror_index(5, 4) == 2);
  CHECK_THROWS_AS(extract_patch(c, 0, 0, 4), ConfigError);
  CHECK_THROWS_AS(extract_patch(c, 4, 0, 3), DataError);
}

TEST_CASE("resize: identity, constants and the bilinear oracle") {
  std::mt19937_64 rng(3);
  const Tensor p32 = random_tensor<float>({32, 32, 3}, rng);
  CHECK(resize_bilinear(p32, 32) == p32);

  const Tensor c = Tensor({5, 5, 2}, 0.75f);
  const Tensor resized = resize_bilinear(c, 32);
  for (float v : resized.data()) CHECK(v == doctest::Approx(0.75f).epsilon(1e-7));

  Tensor checker({2, 2, 1});
  checker.at(0, 0, 0) = 1.0f;
  checker.at(1, 1, 0) = 1.0f;
  CHECK(rel_err(resize_bilinear(checker, 32), resize_oracle(checker, 32)) <= 1e-6);

  const Tensor p9 = random_tensor<float>({9, 9, 4}, rng);
  const Tensor r = resize_bilinear(p9, 32);
  const Tensor64 want = resize_oracle(p9, 32);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::fabs(r[i] - want[i]) <= 1e-6);
}

TEST_CASE("normalization: standardize and minmax") {
  std::mt19937_64 rng(4);
  std::vector<Tensor> patches;
  for (int i = 0; i < 20; ++i) {
    Tensor t = random_tensor<float>({3, 3, 2}, rng, 0.0, 1.0);
    for (std::size_t k = 0; k < t.size(); k += 2) t[k] = t[k] * 5.0f + 10.0f;
    patches.push_back(t);
  }
  const NormStats s = standardize_stats(patches);
  for (std::size_t b = 0; b < 2; ++b) {
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const auto& p : patches) {
      const Tensor z = normalize(p, s);
      for (std::size_t k = b; k < z.size(); k += 2) {
        sum += z[k];
        sq += static_cast<double>(z[k]) * z[k];
        n += 1.0;
      }
    }
    const double mean = sum / n;
    CHECK(std::fabs(mean) <= 0.05);
    CHECK(std::fabs(std::sqrt(sq / n - mean * mean) - 1.0) <= 0.05);
  }

  HsiCube c = index_cube(3, 4, 2);
  const NormStats mm = minmax_stats(c);
  float lo = 1e9f, hi = -1e9f;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t col = 0; col < 4; ++col) {
      const Tensor z = normalize(extract_patch(c, r, col, 1), mm);
      lo = std::min(lo, z[0]);
      hi = std::max(hi, z[0]);
    }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);

  HsiCube flat = blank_cube(2, 2, 1);
  CHECK_THROWS_AS(minmax_stats(flat), DataError);
  std::vector<Tensor> same(3, Tensor({1, 1, 1}, 2.0f));
  CHECK_THROWS_AS(standardize_stats(same), DataError);
  CHECK_THROWS_AS(user_standardize_stats({0.0}, {0.0}), ConfigError);
}

TEST_CASE("augment: no-op path, involutions and determinism") {
  std::mt19937_64 rng(5);
  const Tensor p = random_tensor<float>({4, 5, 3}, rng);
  AugmentConfig off;
  off.hflip_prob = off.vflip_prob = off.radiation_prob = off.mixture_prob = 0.0;
  Rng r0(1);
  CHECK(augment(p, {}, r0, off) == p);
  CHECK(flip_horizontal(flip_horizontal(p)) == p);
  CHECK(flip_vertical(flip_vertical(p)) == p);
  CHECK(flip_horizontal(p).at(0, 0, 2) == p.at(0, 4, 2));
  CHECK(flip_vertical(p).at(0, 1, 0) == p.at(3, 1, 0));

  AugmentConfig flips_only = off;
  flips_only.hflip_prob = 1.0;
  Rng r1(1);
  CHECK(augment(p, {}, r1, flips_only) == flip_horizontal(p));

  const Tensor other = random_tensor<float>({4, 5, 3}, rng);
  const Tensor* pool[] = {&other};
  AugmentConfig all;
  all.hflip_prob = all.vflip_prob = all.radiation_prob = all.mixture_prob = 1.0;
  Rng a = stream_rng(9, RngStream::Augment, 3, 17), b = stream_rng(9, RngStream::Augment, 3, 17);
  const Tensor ya = augment(p, pool, a, all), yb = augment(p, pool, b, all);
  CHECK(ya == yb);
  CHECK_FALSE(ya == p);
}

TEST_CASE("split: counts, disjointness, determinism and exhaustion") {
  const HsiCube c = synth_cube(32, 32, 8, 4, 0.01, 11);
  const std::size_t fifty[] = {50};
  const SplitTable s1 = build_split(c, fifty, 3);
  const SplitTable s2 = build_split(c, fifty, 3);
  CHECK(s1.train == s2.train);
  CHECK(s1.test == s2.test);
  CHECK_NOTHROW(s1.validate(c));
  REQUIRE(s1.class_count() == 4);
  std::size_t labeled = 0;
  for (auto l : c.labels) labeled += l != 0;
  CHECK(s1.train_size() + s1.test_size() == labeled);
  for (std::size_t k = 0; k < 4; ++k) CHECK(s1.train[k].size() == 50);
  CHECK_FALSE(build_split(c, fifty, 4).train == s1.train);

  // A class asked for all of its pixels leaves no test pixels and warns.
  std::vector<std::size_t> counts(4, 1);
  std::size_t class1 = 0;
  for (auto l : c.labels) class1 += l == 1;
  counts[0] = class1;
  int warnings = 0;
  set_log_sink([&](LogLevel level, const std::string&) { warnings += level == LogLevel::Warning; });
  const SplitTable full = build_split(c, counts, 1);
  set_log_sink({});
  CHECK(full.test[0].empty());
  CHECK(warnings == 1);
  counts[0] = class1 + 1;
  CHECK_THROWS_AS(build_split(c, counts, 1), DataError);

  SplitTable broken = s1;
  broken.test[0].push_back(broken.train[0][0]);
  CHECK_THROWS_AS(broken.validate(c), DataError);
}

TEST_CASE("split: 50 per class on a 16-class cube") {
  const HsiCube c = synth_cube(64, 64, 8, 16, 0.01, 2);
  const std::size_t fifty[] = {50};
  const SplitTable s = build_split(c, fifty, 0);
  for (const auto& cls : s.train) CHECK(cls.size() == 50);
}

TEST_CASE("synthetic cube: determinism, signatures and separability") {
  const HsiCube a = synth_cube(24, 20, 10, 3, 0.05, 7), b = synth_cube(24, 20, 10, 3, 0.05, 7);
  CHECK(a.reflectance == b.reflectance);
  CHECK(a.labels == b.labels);
  CHECK_NOTHROW(a.validate());
  CHECK(a.class_count() == 3);

  const HsiCube clean = synth_cube(24, 20, 10, 3, 0.0, 7);
  std::vector<const float*> sig(4, nullptr);
  for (std::size_t r = 0; r < 24; ++r)
    for (std::size_t col = 0; col < 20; ++col) {
      const auto l = clean.label(r, col);
      if (!sig[l]) sig[l] = clean.pixel(r, col);
      CHECK(std::equal(sig[l], sig[l] + 10, clean.pixel(r, col)));
    }

  // Nearest-signature classification on a two-class cube with small noise.
  const HsiCube two = synth_cube(32, 32, 16, 2, 1e-3, 5);
  const HsiCube two_clean = synth_cube(32, 32, 16, 2, 0.0, 5);
  std::vector<const float*> centers(3, nullptr);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t col = 0; col < 32; ++col) centers[two_clean.label(r, col)] = two_clean.pixel(r, col);
  std::size_t correct = 0, total = 0;
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t col = 0; col < 32; ++col) {
      double best = 1e300;
      std::size_t arg = 0;
      for (std::size_t k = 1; k <= 2; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < 16; ++j) d += std::pow(two.pixel(r, col)[j] - centers[k][j], 2);
        if (d < best) best = d, arg = k;
      }
      correct += arg == two.label(r, col);
      ++total;
    }
  CHECK(correct == total);
  CHECK_THROWS_AS(synth_cube(4, 4, 4, 0, 0.1, 1), ConfigError);
}

TEST_CASE("cube and split files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "peft_test_hsi";
  std::filesystem::create_directories(dir);
  const HsiCube c = synth_cube(12, 9, 5, 3, 0.1, 4);
  write_cube_file((dir / "c.hsic").string(), c);
  write_label_file((dir / "c.hsgt").string(), c);
  const HsiCube back = read_cube((dir / "c.hsic").string(), (dir / "c.hsgt").string());
  CHECK(back.reflectance == c.reflectance);
  CHECK(back.labels == c.labels);

  const std::size_t five[] = {5};
  const SplitTable s = build_split(c, five, 2);
  write_split_file((dir / "split.txt").string(), s);
  const SplitTable sb = read_split_file((dir / "split.txt").string(), c);
  CHECK(sb.train == s.train);
  CHECK(sb.test == s.test);

  {
    std::ofstream((dir / "bad.hsic").string(), std::ios::binary) << "HSIX";
    CHECK_THROWS_AS(read_cube((dir / "bad.hsic").string(), (dir / "c.hsgt").string()), DataError);
  }
  std::filesystem::remove_all(dir);
}
