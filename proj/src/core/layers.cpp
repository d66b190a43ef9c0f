#include "core/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace peft {

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, const std::string& name)
    : weight(name + ".weight", BasicTensor<T>({out, in})), bias(name + ".bias", BasicTensor<T>({out})) {}

template <typename T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& x) const {
  require_matrix(x.shape(), "linear");
  if (x.dim(1) != in_features())
    throw ShapeError("linear '" + weight.name + "': input width " + std::to_string(x.dim(1)) +
                     " != " + std::to_string(in_features()));
  BasicTensor<T> y = matmul_nt(x, weight.value);
  const std::size_t n = y.dim(0), out = y.dim(1);
  const T* b = bias.value.raw();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = y.raw() + i * out;
    for (std::size_t j = 0; j < out; ++j) row[j] += b[j];
  }
  return y;
}

template <typename T>
BasicTensor<T> Linear<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>& dy, bool need_dx) {
  require_matrix(dy.shape(), "linear backward");
  if (dy.dim(1) != out_features() || dy.dim(0) != x.dim(0))
    throw ShapeError("linear '" + weight.name + "' backward: gradient shape " +
                     shape_to_string(dy.shape()));
  if (weight.trainable) matmul_tn_accumulate(dy, x, weight.grad);
  if (bias.trainable) {
    const std::size_t n = dy.dim(0), out = dy.dim(1);
    T* g = bias.grad.raw();
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = dy.raw() + i * out;
      for (std::size_t j = 0; j < out; ++j) g[j] += row[j];
    }
  }
  if (!need_dx) return {};
  return matmul(dy, weight.value);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t channels, const std::string& name)
    : scale(name + ".scale", BasicTensor<T>({channels}, T{1})),
      shift(name + ".shift", BasicTensor<T>({channels})) {}

template <typename T>
BasicTensor<T> LayerNorm<T>::forward(const BasicTensor<T>& x, Cache* cache) const {
  require_matrix(x.shape(), "layer_norm");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (c != scale.size())
    throw ShapeError("layer_norm '" + scale.name + "': channel count " + std::to_string(c) +
                     " != " + std::to_string(scale.size()));
  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat;
  if (cache) {
    xhat = BasicTensor<T>(x.shape());
    cache->inv_std.assign(n, T{0});
  }
  const T* g = scale.value.raw();
  const T* b = shift.value.raw();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.raw() + i * c;
    T mean{0};
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(kEpsilon));
    T* out = y.raw() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * inv;
      out[j] = h * g[j] + b[j];
      if (cache) xhat.raw()[i * c + j] = h;
    }
    if (cache) cache->inv_std[i] = inv;
  }
  if (cache) cache->normalized = std::move(xhat);
  return y;
}

template <typename T>
BasicTensor<T> LayerNorm<T>::backward(const Cache& cache, const BasicTensor<T>& dy) {
  require_same_shape(cache.normalized.shape(), dy.shape(), "layer_norm backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1);
  BasicTensor<T> dx(dy.shape());
  const T* g = scale.value.raw();
  for (std::size_t i = 0; i < n; ++i) {
    const T* d = dy.raw() + i * c;
    const T* h = cache.normalized.raw() + i * c;
    if (scale.trainable)
      for (std::size_t j = 0; j < c; ++j) scale.grad.raw()[j] += d[j] * h[j];
    if (shift.trainable)
      for (std::size_t j = 0; j < c; ++j) shift.grad.raw()[j] += d[j];
    T sum_dh{0}, sum_dh_h{0};
    for (std::size_t j = 0; j < c; ++j) {
      const T dh = d[j] * g[j];
      sum_dh += dh;
      sum_dh_h += dh * h[j];
    }
    const T inv_c = T{1} / static_cast<T>(c);
    T* out = dx.raw() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const T dh = d[j] * g[j];
      out[j] = cache.inv_std[i] * (dh - inv_c * sum_dh - h[j] * inv_c * sum_dh_h);
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> gelu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    y[i] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  }
  return y;
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  require_same_shape(x.shape(), dy.shape(), "gelu backward");
  BasicTensor<T> dx(x.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  require_matrix(x.shape(), "softmax");
  const std::size_t n = x.dim(0), c = x.dim(1);
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.raw() + i * c;
    T* out = y.raw() + i * c;
    const T mx = *std::max_element(row, row + c);
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(row[j] - mx);
      sum += out[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
  }
  return y;
}

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y, const BasicTensor<T>& dy) {
  require_same_shape(y.shape(), dy.shape(), "softmax backward");
  const std::size_t n = y.dim(0), c = y.dim(1);
  BasicTensor<T> dx(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = y.raw() + i * c;
    const T* d = dy.raw() + i * c;
    T dot{0};
    for (std::size_t j = 0; j < c; ++j) dot += p[j] * d[j];
    T* out = dx.raw() + i * c;
    for (std::size_t j = 0; j < c; ++j) out[j] = p[j] * (d[j] - dot);
  }
  return dx;
}

template <typename T>
BasicTensor<T> mean_pool_forward(const BasicTensor<T>& x) {
  require_matrix(x.shape(), "mean_pool");
  const std::size_t n = x.dim(0), c = x.dim(1);
  BasicTensor<T> y({c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += x.at(i, j);
  const T inv = T{1} / static_cast<T>(n);
  for (auto& v : y.data()) v *= inv;
  return y;
}

template <typename T>
BasicTensor<T> mean_pool_backward(const BasicTensor<T>& dy, std::size_t rows) {
  const std::size_t c = dy.size();
  BasicTensor<T> dx({rows, c});
  const T inv = T{1} / static_cast<T>(rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) dx.at(i, j) = dy[j] * inv;
  return dx;
}

template <typename T>
CrossEntropyResult<T> cross_entropy(const BasicTensor<T>& logits, std::size_t label) {
  const std::size_t k = logits.size();
  if (label >= k)
    throw ConfigError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                      std::to_string(k) + ")");
  const T mx = *std::max_element(logits.data().begin(), logits.data().end());
  T sum{0};
  for (auto v : logits.data()) sum += std::exp(v - mx);
  const T log_z = mx + std::log(sum);
  CrossEntropyResult<T> r{log_z - logits[label], BasicTensor<T>({k})};
  for (std::size_t i = 0; i < k; ++i) r.dlogits[i] = std::exp(logits[i] - log_z);
  r.dlogits[label] -= T{1};
  return r;
}

template <typename T>
AttentionLayer<T>::AttentionLayer(std::size_t dim, std::size_t heads, const std::string& prefix)
    : q_proj(dim, dim, prefix + ".q"),
      k_proj(dim, dim, prefix + ".k"),
      v_proj(dim, dim, prefix + ".v"),
      out_proj(dim, dim, prefix + ".out"),
      heads_(heads) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention: head count " + std::to_string(heads) + " does not divide width " +
                      std::to_string(dim));
}

template <typename T>
BasicTensor<T> AttentionLayer<T>::forward(const BasicTensor<T>& x, Cache* cache,
                                          Rng* dropout_rng) const {
  require_matrix(x.shape(), "attention");
  const std::size_t n = x.dim(0), d = dim(), dh = d / heads_;
  if (x.dim(1) != d) throw ShapeError("attention: input width mismatch");

  BasicTensor<T> q = q_proj.forward(x);
  if (q_delta) add_inplace(q, q_delta->forward(x));
  BasicTensor<T> k = k_proj.forward(x);
  BasicTensor<T> v = v_proj.forward(x);
  if (v_delta) add_inplace(v, v_delta->forward(x));

  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  BasicTensor<T> context({n, d});
  std::vector<BasicTensor<T>> probs, keep;
  if (cache) probs.reserve(heads_);
  const bool drop = dropout_rng != nullptr && dropout > 0.0;
  std::bernoulli_distribution keep_draw(1.0 - dropout);
  const T keep_scale = drop ? static_cast<T>(1.0 / (1.0 - dropout)) : T{1};
  BasicTensor<T> scores({n, n});
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const T* qi = q.raw() + i * d + off;
      for (std::size_t j = 0; j < n; ++j) {
        const T* kj = k.raw() + j * d + off;
        T s{0};
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        scores.at(i, j) = s * scale;
      }
    }
    BasicTensor<T> p = softmax_rows(scores);
    BasicTensor<T> mask;
    if (drop) {
      mask = BasicTensor<T>({n, n});
      for (auto& m : mask.data()) m = keep_draw(*dropout_rng) ? keep_scale : T{0};
    }
    for (std::size_t i = 0; i < n; ++i) {
      T* ci = context.raw() + i * d + off;
      for (std::size_t j = 0; j < n; ++j) {
        const T w = drop ? p.at(i, j) * mask.at(i, j) : p.at(i, j);
        const T* vj = v.raw() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) ci[c] += w * vj[c];
      }
    }
    if (cache) {
      probs.push_back(std::move(p));
      if (drop) keep.push_back(std::move(mask));
    }
  }
  BasicTensor<T> y = out_proj.forward(context);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->keep = std::move(keep);
    cache->context = std::move(context);
  }
  return y;
}

template <typename T>
BasicTensor<T> AttentionLayer<T>::backward(const Cache& cache, const BasicTensor<T>& dy) {
  const std::size_t n = cache.x.dim(0), d = dim(), dh = d / heads_;
  BasicTensor<T> dcontext = out_proj.backward(cache.context, dy);
  BasicTensor<T> dq({n, d}), dk({n, d}), dv({n, d});
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  BasicTensor<T> dp({n, n});
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t off = h * dh;
    const BasicTensor<T>& p = cache.probs[h];
    const bool drop = !cache.keep.empty();
    for (std::size_t i = 0; i < n; ++i) {
      const T* doi = dcontext.raw() + i * d + off;
      for (std::size_t j = 0; j < n; ++j) {
        const T* vj = cache.v.raw() + j * d + off;
        T s{0};
        for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
        const T m = drop ? cache.keep[h].at(i, j) : T{1};
        dp.at(i, j) = s * m;
        const T w = p.at(i, j) * m;
        T* dvj = dv.raw() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) dvj[c] += w * doi[c];
      }
    }
    BasicTensor<T> ds = softmax_rows_backward(p, dp);
    for (std::size_t i = 0; i < n; ++i) {
      T* dqi = dq.raw() + i * d + off;
      const T* qi = cache.q.raw() + i * d + off;
      for (std::size_t j = 0; j < n; ++j) {
        const T g = ds.at(i, j) * scale;
        const T* kj = cache.k.raw() + j * d + off;
        T* dkj = dk.raw() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) {
          dqi[c] += g * kj[c];
          dkj[c] += g * qi[c];
        }
      }
    }
  }
  BasicTensor<T> dx = q_proj.backward(cache.x, dq);
  if (q_delta) add_inplace(dx, q_delta->backward(cache.x, dq));
  add_inplace(dx, k_proj.backward(cache.x, dk));
  add_inplace(dx, v_proj.backward(cache.x, dv));
  if (v_delta) add_inplace(dx, v_delta->backward(cache.x, dv));
  return dx;
}

template <typename T>
EncoderBlock<T>::EncoderBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                              const std::string& prefix)
    : norm1(dim, prefix + ".norm1"),
      norm2(dim, prefix + ".norm2"),
      attn(dim, heads, prefix + ".attn"),
      fc1(dim, dim * mlp_ratio, prefix + ".mlp.fc1"),
      fc2(dim * mlp_ratio, dim, prefix + ".mlp.fc2") {}

template <typename T>
BasicTensor<T> EncoderBlock<T>::forward(const BasicTensor<T>& x, Cache* cache,
                                        Rng* dropout_rng) const {
  BasicTensor<T> h = x;
  add_inplace(h, attn.forward(norm1.forward(x, cache ? &cache->norm1 : nullptr),
                              cache ? &cache->attn : nullptr, dropout_rng));
  BasicTensor<T> n2 = norm2.forward(h, cache ? &cache->norm2 : nullptr);
  BasicTensor<T> pre = fc1.forward(n2);
  BasicTensor<T> act = gelu_forward(pre);
  add_inplace(h, fc2.forward(act));
  if (cache) {
    cache->norm2_out = std::move(n2);
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(act);
  }
  return h;
}

template <typename T>
BasicTensor<T> EncoderBlock<T>::backward(const Cache& cache, const BasicTensor<T>& dy) {
  // dy flows unchanged through both residual paths.
  BasicTensor<T> dact = fc2.backward(cache.hidden, dy);
  BasicTensor<T> dpre = gelu_backward(cache.hidden_pre, dact);
  BasicTensor<T> dn2 = fc1.backward(cache.norm2_out, dpre);
  BasicTensor<T> dh = dy;
  add_inplace(dh, norm2.backward(cache.norm2, dn2));
  BasicTensor<T> dn1 = attn.backward(cache.attn, dh);
  BasicTensor<T> dx = dh;
  add_inplace(dx, norm1.backward(cache.norm1, dn1));
  return dx;
}

template <typename T>
std::vector<Param<T>*> EncoderBlock<T>::params() {
  return {&norm1.scale,          &norm1.shift,          &attn.q_proj.weight, &attn.q_proj.bias,
          &attn.k_proj.weight,   &attn.k_proj.bias,     &attn.v_proj.weight, &attn.v_proj.bias,
          &attn.out_proj.weight, &attn.out_proj.bias,   &norm2.scale,        &norm2.shift,
          &fc1.weight,           &fc1.bias,             &fc2.weight,         &fc2.bias};
}

#define PEFT_INSTANTIATE_LAYERS(T)                                                          \
  template class Linear<T>;                                                                 \
  template class LayerNorm<T>;                                                              \
  template class AttentionLayer<T>;                                                         \
  template class EncoderBlock<T>;                                                           \
  template BasicTensor<T> gelu_forward(const BasicTensor<T>&);                              \
  template BasicTensor<T> gelu_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                              \
  template BasicTensor<T> softmax_rows_backward(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> mean_pool_forward(const BasicTensor<T>&);                         \
  template BasicTensor<T> mean_pool_backward(const BasicTensor<T>&, std::size_t);           \
  template CrossEntropyResult<T> cross_entropy(const BasicTensor<T>&, std::size_t);

PEFT_INSTANTIATE_LAYERS(float)
PEFT_INSTANTIATE_LAYERS(double)

#undef PEFT_INSTANTIATE_LAYERS

}  // namespace peft
