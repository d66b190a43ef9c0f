#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "core/adapter_spec.hpp"
#include "core/layers.hpp"

namespace peft {

struct ModelConfig {
  std::size_t input_hw = 32;
  std::size_t input_bands = 12;
  std::size_t token_hw = 8;
  std::size_t token_depth = 3;
  // Spatial stride between tokens; 0 means token_hw (non-overlapping tiling).
  std::size_t token_stride = 0;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;
  std::size_t n_classes = 9;
  double attn_dropout = 0.0;

  static ModelConfig base(std::size_t n_classes);
  static ModelConfig tiny(std::size_t n_classes);

  std::size_t stride() const { return token_stride == 0 ? token_hw : token_stride; }
  std::size_t grid_side() const { return (input_hw - token_hw) / stride() + 1; }
  std::size_t spatial_tokens() const { return grid_side() * grid_side(); }
  std::size_t spectral_groups() const { return input_bands / token_depth; }
  std::size_t token_count() const { return spatial_tokens() * spectral_groups(); }
  std::size_t token_features() const { return token_hw * token_hw * token_depth; }

  void validate() const;
  std::string canonical_text() const;
  static ModelConfig parse_canonical(std::string_view text);
};

// Splits an input_hw×input_hw×input_bands cube into 3-D tokens. Token t
// covers spatial cell t / G and spectral group t % G (spectral groups vary
// fastest); its values are flattened (row, col, band) row-major.
template <typename T>
BasicTensor<T> tokenize(const ModelConfig& cfg, const BasicTensor<T>& x);

template <typename T>
class VitModel {
 public:
  struct Cache {
    BasicTensor<T> tokens;
    std::vector<typename EncoderBlock<T>::Cache> blocks;
    typename LayerNorm<T>::Cache final_norm;
    BasicTensor<T> pooled;
  };

  explicit VitModel(const ModelConfig& cfg);

  // Truncated-normal(0, init_std) weights and positional embeddings, zero
  // biases, unit norm scales.
  void initialize(Rng& rng, double init_std = 0.02);

  const ModelConfig& config() const { return cfg_; }

  BasicTensor<T> forward(const BasicTensor<T>& x, Cache* cache = nullptr,
                         Rng* dropout_rng = nullptr) const;
  // Accumulates gradients of every trainable parameter.
  void backward(const Cache& cache, const BasicTensor<T>& dlogits);

  // Base-model parameters in a fixed order (excludes adapter factors).
  std::vector<Param<T>*> base_params();
  std::vector<const Param<T>*> base_params() const;
  // Adapter factor parameters in site order: layer, then q before v.
  std::vector<Param<T>*> adapter_params();
  std::vector<const Param<T>*> adapter_params() const;
  // Base then adapter parameters.
  std::vector<Param<T>*> all_params();
  std::vector<const Param<T>*> all_params() const;

  void zero_grad();
  void set_all_trainable(bool trainable);

  // Scalar count of base-model parameters, including positional embeddings and head.
  std::size_t count_all_params() const;

  Linear<T> embed;
  Param<T> spatial_pos;   // S×d
  Param<T> spectral_pos;  // G×d
  std::vector<EncoderBlock<T>> blocks;
  LayerNorm<T> final_norm;
  Linear<T> head;

  // Set by attach(); cleared by nothing. fused marks that ΔW was folded in.
  std::optional<AdapterSpec> adapter_spec;
  bool fused = false;

 private:
  ModelConfig cfg_;
};

}  // namespace peft
