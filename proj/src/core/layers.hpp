#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace peft {

// A named trainable tensor with its gradient buffer. A frozen parameter never
// receives gradient contributions.
template <typename T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, BasicTensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { grad.zero(); }
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, const std::string& name);

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  // y = x Wᵀ + b for x of shape n×in.
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  // Returns dx (empty when need_dx is false); accumulates dW and db for the
  // trainable members only.
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy, bool need_dx = true);

  Param<T> weight;  // out×in
  Param<T> bias;    // out
};

// Layer normalization over the channel (last) axis.
template <typename T>
class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-6;

  struct Cache {
    BasicTensor<T> normalized;  // x̂
    std::vector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(std::size_t channels, const std::string& name);

  BasicTensor<T> forward(const BasicTensor<T>& x, Cache* cache) const;
  BasicTensor<T> backward(const Cache& cache, const BasicTensor<T>& dy);

  Param<T> scale;
  Param<T> shift;
};

// Exact erf form.
template <typename T>
BasicTensor<T> gelu_forward(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

// Row-wise softmax of a 2-D tensor.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y, const BasicTensor<T>& dy);

// Mean over rows: T×d -> d.
template <typename T>
BasicTensor<T> mean_pool_forward(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean_pool_backward(const BasicTensor<T>& dy, std::size_t rows);

// Numerically stable log-softmax cross entropy for one sample.
template <typename T>
struct CrossEntropyResult {
  T loss;
  BasicTensor<T> dlogits;
};
template <typename T>
CrossEntropyResult<T> cross_entropy(const BasicTensor<T>& logits, std::size_t label);

// Additive weight-delta hook attached to a projection: y = W₀x + b + Δ(x).
// Implementations live in adapters.hpp.
template <typename T>
class DeltaAdapter {
 public:
  virtual ~DeltaAdapter() = default;

  // x: n×q -> n×p
  virtual BasicTensor<T> forward(const BasicTensor<T>& x) const = 0;
  // Accumulates factor gradients, returns dx.
  virtual BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) = 0;
  // Materialized p×q ΔW.
  virtual BasicTensor<T> delta_weight() const = 0;
  virtual std::vector<Param<T>*> params() = 0;
  virtual std::vector<const Param<T>*> params() const = 0;
};

template <typename T>
class AttentionLayer {
 public:
  struct Cache {
    BasicTensor<T> x;
    BasicTensor<T> q, k, v;
    std::vector<BasicTensor<T>> probs;  // per head, T×T, before dropout
    std::vector<BasicTensor<T>> keep;   // per head dropout multipliers; empty when inactive
    BasicTensor<T> context;             // concatenated heads, T×d
  };

  AttentionLayer() = default;
  AttentionLayer(std::size_t dim, std::size_t heads, const std::string& prefix);

  // Dropout on attention weights is applied only when dropout_rng is given.
  BasicTensor<T> forward(const BasicTensor<T>& x, Cache* cache, Rng* dropout_rng = nullptr) const;
  BasicTensor<T> backward(const Cache& cache, const BasicTensor<T>& dy);

  std::size_t dim() const { return q_proj.out_features(); }
  std::size_t head_count() const { return heads_; }

  Linear<T> q_proj, k_proj, v_proj, out_proj;
  // Adapters only ever attach to the query and value projections.
  std::unique_ptr<DeltaAdapter<T>> q_delta;
  std::unique_ptr<DeltaAdapter<T>> v_delta;
  double dropout = 0.0;

 private:
  std::size_t heads_ = 1;
};

// Pre-norm transformer block: h = x + attn(ln1(x)); y = h + mlp(ln2(h)).
template <typename T>
class EncoderBlock {
 public:
  struct Cache {
    typename LayerNorm<T>::Cache norm1, norm2;
    typename AttentionLayer<T>::Cache attn;
    BasicTensor<T> norm2_out;
    BasicTensor<T> hidden_pre;  // fc1 output before GELU
    BasicTensor<T> hidden;      // after GELU
  };

  EncoderBlock() = default;
  EncoderBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, const std::string& prefix);

  BasicTensor<T> forward(const BasicTensor<T>& x, Cache* cache, Rng* dropout_rng = nullptr) const;
  BasicTensor<T> backward(const Cache& cache, const BasicTensor<T>& dy);

  std::vector<Param<T>*> params();

  LayerNorm<T> norm1, norm2;
  AttentionLayer<T> attn;
  Linear<T> fc1, fc2;
};

}  // namespace peft
