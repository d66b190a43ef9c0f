#include "core/vit.hpp"

#include <cmath>
#include <sstream>

#include "core/text_util.hpp"

namespace peft {

ModelConfig ModelConfig::base(std::size_t n_classes) {
  ModelConfig c;
  c.n_classes = n_classes;
  return c;
}

ModelConfig ModelConfig::tiny(std::size_t n_classes) {
  ModelConfig c;
  c.embed_dim = 64;
  c.depth = 2;
  c.heads = 4;
  c.n_classes = n_classes;
  return c;
}

void ModelConfig::validate() const {
  if (input_hw == 0 || input_bands == 0 || token_hw == 0 || token_depth == 0)
    throw ConfigError("model geometry must be positive");
  if (token_hw > input_hw) throw ConfigError("token_hw exceeds input_hw");
  if (token_stride == 0 && input_hw % token_hw != 0)
    throw ConfigError("input_hw " + std::to_string(input_hw) + " is not divisible by token_hw " +
                      std::to_string(token_hw));
  if (token_stride != 0 && (input_hw - token_hw) % token_stride != 0)
    throw ConfigError("token_stride does not tile input_hw");
  if (input_bands % token_depth != 0)
    throw ConfigError("input_bands " + std::to_string(input_bands) +
                      " is not divisible by token_depth " + std::to_string(token_depth));
  if (embed_dim == 0 || depth == 0 || mlp_ratio == 0) throw ConfigError("model sizes must be positive");
  if (heads == 0 || embed_dim % heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  if (n_classes == 0) throw ConfigError("n_classes must be positive");
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0))
    throw ConfigError("attn_dropout must lie in [0, 1)");
}

std::string ModelConfig::canonical_text() const {
  std::ostringstream os;
  os << "input_hw = " << input_hw << '\n'
     << "input_bands = " << input_bands << '\n'
     << "token_hw = " << token_hw << '\n'
     << "token_depth = " << token_depth << '\n'
     << "token_stride = " << token_stride << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "depth = " << depth << '\n'
     << "heads = " << heads << '\n'
     << "mlp_ratio = " << mlp_ratio << '\n'
     << "n_classes = " << n_classes << '\n'
     << "attn_dropout = " << format_double(attn_dropout) << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse_canonical(std::string_view text) {
  ModelConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "input_hw") c.input_hw = parse_size(value, key);
    else if (key == "input_bands") c.input_bands = parse_size(value, key);
    else if (key == "token_hw") c.token_hw = parse_size(value, key);
    else if (key == "token_depth") c.token_depth = parse_size(value, key);
    else if (key == "token_stride") c.token_stride = parse_size(value, key);
    else if (key == "embed_dim") c.embed_dim = parse_size(value, key);
    else if (key == "depth") c.depth = parse_size(value, key);
    else if (key == "heads") c.heads = parse_size(value, key);
    else if (key == "mlp_ratio") c.mlp_ratio = parse_size(value, key);
    else if (key == "n_classes") c.n_classes = parse_size(value, key);
    else if (key == "attn_dropout") c.attn_dropout = parse_real(value, key);
    else throw DataError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

template <typename T>
BasicTensor<T> tokenize(const ModelConfig& cfg, const BasicTensor<T>& x) {
  const Shape expected{cfg.input_hw, cfg.input_hw, cfg.input_bands};
  if (x.shape() != expected)
    throw ShapeError("tokenize: expected input " + shape_to_string(expected) + ", got " +
                     shape_to_string(x.shape()));
  const std::size_t side = cfg.grid_side(), groups = cfg.spectral_groups();
  const std::size_t hw = cfg.token_hw, depth = cfg.token_depth, stride = cfg.stride();
  const std::size_t bands = cfg.input_bands, width = cfg.input_hw;
  BasicTensor<T> tokens({cfg.token_count(), cfg.token_features()});
  T* out = tokens.raw();
  for (std::size_t gr = 0; gr < side; ++gr)
    for (std::size_t gc = 0; gc < side; ++gc)
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t r = 0; r < hw; ++r)
          for (std::size_t c = 0; c < hw; ++c) {
            const T* px = x.raw() + ((gr * stride + r) * width + (gc * stride + c)) * bands + g * depth;
            for (std::size_t b = 0; b < depth; ++b) *out++ = px[b];
          }
  return tokens;
}

template <typename T>
VitModel<T>::VitModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim;
  embed = Linear<T>(cfg_.token_features(), d, "embed");
  spatial_pos = Param<T>("pos.spatial", BasicTensor<T>({cfg_.spatial_tokens(), d}));
  spectral_pos = Param<T>("pos.spectral", BasicTensor<T>({cfg_.spectral_groups(), d}));
  blocks.reserve(cfg_.depth);
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    blocks.emplace_back(d, cfg_.heads, cfg_.mlp_ratio, "layer" + std::to_string(i));
    blocks.back().attn.dropout = cfg_.attn_dropout;
  }
  final_norm = LayerNorm<T>(d, "norm");
  head = Linear<T>(d, cfg_.n_classes, "head");
}

namespace {

template <typename T>
void fill_truncated_normal(BasicTensor<T>& t, Rng& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data()) {
    double s;
    do {
      s = dist(rng);
    } while (std::abs(s) > 2.0 * std);
    v = static_cast<T>(s);
  }
}

}  // namespace

template <typename T>
void VitModel<T>::initialize(Rng& rng, double init_std) {
  for (Param<T>* p : base_params()) {
    const std::string& n = p->name;
    const bool is_norm = n.ends_with(".scale") || n.ends_with(".shift");
    if (is_norm) {
      p->value.fill(n.ends_with(".scale") ? T{1} : T{0});
    } else if (n.ends_with(".bias")) {
      p->value.zero();
    } else {
      fill_truncated_normal(p->value, rng, init_std);
    }
  }
}

template <typename T>
BasicTensor<T> VitModel<T>::forward(const BasicTensor<T>& x, Cache* cache, Rng* dropout_rng) const {
  BasicTensor<T> tokens = tokenize(cfg_, x);
  BasicTensor<T> h = embed.forward(tokens);
  const std::size_t d = cfg_.embed_dim, groups = cfg_.spectral_groups();
  for (std::size_t t = 0, n = h.dim(0); t < n; ++t) {
    T* row = h.raw() + t * d;
    const T* sp = spatial_pos.value.raw() + (t / groups) * d;
    const T* sg = spectral_pos.value.raw() + (t % groups) * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += sp[j] + sg[j];
  }
  if (cache) cache->blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i].forward(h, cache ? &cache->blocks[i] : nullptr, dropout_rng);
  BasicTensor<T> normed = final_norm.forward(h, cache ? &cache->final_norm : nullptr);
  BasicTensor<T> pooled = mean_pool_forward(normed).reshaped({1, d});
  BasicTensor<T> logits = head.forward(pooled).reshaped({cfg_.n_classes});
  if (cache) {
    cache->tokens = std::move(tokens);
    cache->pooled = std::move(pooled);
  }
  return logits;
}

template <typename T>
void VitModel<T>::backward(const Cache& cache, const BasicTensor<T>& dlogits) {
  if (dlogits.size() != cfg_.n_classes) throw ShapeError("backward: logits gradient size mismatch");
  const std::size_t d = cfg_.embed_dim, groups = cfg_.spectral_groups(), n = cfg_.token_count();
  BasicTensor<T> dpooled = head.backward(cache.pooled, dlogits.reshaped({1, cfg_.n_classes}));
  BasicTensor<T> dh = final_norm.backward(cache.final_norm,
                                          mean_pool_backward(dpooled.reshaped({d}), n));
  for (std::size_t i = blocks.size(); i-- > 0;) dh = blocks[i].backward(cache.blocks[i], dh);
  if (spatial_pos.trainable || spectral_pos.trainable) {
    for (std::size_t t = 0; t < n; ++t) {
      const T* row = dh.raw() + t * d;
      if (spatial_pos.trainable) {
        T* g = spatial_pos.grad.raw() + (t / groups) * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += row[j];
      }
      if (spectral_pos.trainable) {
        T* g = spectral_pos.grad.raw() + (t % groups) * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += row[j];
      }
    }
  }
  embed.backward(cache.tokens, dh, /*need_dx=*/false);
}

template <typename T>
std::vector<Param<T>*> VitModel<T>::base_params() {
  std::vector<Param<T>*> out{&embed.weight, &embed.bias, &spatial_pos, &spectral_pos};
  for (auto& b : blocks)
    for (Param<T>* p : b.params()) out.push_back(p);
  out.insert(out.end(), {&final_norm.scale, &final_norm.shift, &head.weight, &head.bias});
  return out;
}

template <typename T>
std::vector<const Param<T>*> VitModel<T>::base_params() const {
  auto mut = const_cast<VitModel*>(this)->base_params();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<Param<T>*> VitModel<T>::adapter_params() {
  std::vector<Param<T>*> out;
  for (auto& b : blocks)
    for (DeltaAdapter<T>* a : {b.attn.q_delta.get(), b.attn.v_delta.get()})
      if (a)
        for (Param<T>* p : a->params()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const Param<T>*> VitModel<T>::adapter_params() const {
  auto mut = const_cast<VitModel*>(this)->adapter_params();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<Param<T>*> VitModel<T>::all_params() {
  auto out = base_params();
  for (Param<T>* p : adapter_params()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const Param<T>*> VitModel<T>::all_params() const {
  auto mut = const_cast<VitModel*>(this)->all_params();
  return {mut.begin(), mut.end()};
}

template <typename T>
void VitModel<T>::zero_grad() {
  for (Param<T>* p : all_params()) p->zero_grad();
}

template <typename T>
void VitModel<T>::set_all_trainable(bool trainable) {
  for (Param<T>* p : base_params()) p->trainable = trainable;
}

template <typename T>
std::size_t VitModel<T>::count_all_params() const {
  std::size_t n = 0;
  for (const Param<T>* p : base_params()) n += p->size();
  return n;
}

template class VitModel<float>;
template class VitModel<double>;
template BasicTensor<float> tokenize(const ModelConfig&, const BasicTensor<float>&);
template BasicTensor<double> tokenize(const ModelConfig&, const BasicTensor<double>&);

}  // namespace peft
