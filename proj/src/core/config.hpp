#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "core/adapter_spec.hpp"
#include "core/hsi.hpp"
#include "core/optimizer.hpp"
#include "core/vit.hpp"

namespace peft {

struct DataSection {
  // .hsic / .hsgt paths. When both are empty the synthetic cube below is used.
  std::string cube;
  std::string labels;
  std::size_t synth_height = 64;
  std::size_t synth_width = 64;
  std::size_t synth_bands = 32;
  std::size_t synth_classes = 5;
  double synth_noise = 0.05;
  std::uint64_t synth_seed = 7;
  std::size_t pca_components = 12;
  std::size_t patch_size = 9;
  NormMode normalization = NormMode::Standardize;
  // Optional user-supplied per-band statistics for standardization.
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  bool uses_synth() const { return cube.empty() && labels.empty(); }
};

struct SplitSection {
  // One entry per class, or a single entry applied to every class.
  std::vector<std::size_t> train_per_class{50};
  // Falls back to the run seed.
  std::optional<std::uint64_t> seed;
  // Optional pre-computed split file; overrides sampling.
  std::string file;
};

struct ModelSection {
  std::string preset = "tiny";  // tiny | base | custom
  // Explicit overrides of the preset; unset fields keep the preset value.
  std::optional<std::size_t> embed_dim, depth, heads, mlp_ratio, token_hw, token_depth, token_stride;
  std::optional<double> attn_dropout;
  std::string pretrained;  // full-model checkpoint with base weights
  double init_std = 0.02;

  ModelConfig resolve(std::size_t n_classes, std::size_t bands) const;
};

struct TrainSection {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  bool augment = true;
  // Evaluate on the test split every N epochs (and always after the last).
  std::size_t eval_every = 1;
  // Cap on evaluated test pixels per intermediate epoch (0 = all). The final
  // evaluation always covers the whole test split.
  std::size_t eval_subset = 0;
  std::size_t threads = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  SplitSection split;
  ModelSection model;
  AdapterSpec adapter;
  OptimizerConfig optim;
  TrainSection train;
  AugmentConfig augment;
  std::string output_dir = "out";
  // λ values for sweep-lambda.
  std::vector<double> sweep_lambdas;

  std::uint64_t split_seed() const { return split.seed.value_or(seed); }

  // Sets "section.key" (or a bare top-level key). Unknown keys throw ConfigError.
  void set(std::string_view dotted_key, std::string_view value);
  void validate() const;
  // Every key with its resolved value, in parseable form.
  std::string canonical_text() const;
};

// Flat "key = value" lines grouped under "[section]" headers.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

}  // namespace peft
