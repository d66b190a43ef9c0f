#include "core/adapters.hpp"

#include <random>

namespace peft {

namespace {

template <typename T>
void fill_normal(BasicTensor<T>& t, Rng& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
BasicTensor<T> scaled(BasicTensor<T> t, T s) {
  scale_inplace(t, s);
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> kron_rows(const BasicTensor<T>& left, const BasicTensor<T>& right,
                         const BasicTensor<T>& x, T scale) {
  require_matrix(left.shape(), "kron_rows");
  require_matrix(right.shape(), "kron_rows");
  require_matrix(x.shape(), "kron_rows");
  const std::size_t r1 = left.dim(0), r2 = left.dim(1), m = right.dim(0), n = right.dim(1);
  const std::size_t rows = x.dim(0);
  if (x.dim(1) != r2 * n)
    throw ShapeError("kron_rows: input width " + std::to_string(x.dim(1)) + " != " +
                     std::to_string(r2 * n));
  // Each input row, read row-major as r2×n, is unvec(x)ᵀ; its image is
  // (left · unvec(x)ᵀ · rightᵀ) read row-major.
  const BasicTensor<T> u = matmul_nt(x.reshaped({rows * r2, n}), right);  // (rows·r2)×m
  BasicTensor<T> y({rows, r1 * m});
  for (std::size_t t = 0; t < rows; ++t) {
    const T* ut = u.raw() + t * r2 * m;
    T* yt = y.raw() + t * r1 * m;
    for (std::size_t i = 0; i < r1; ++i) {
      T* yrow = yt + i * m;
      for (std::size_t j = 0; j < r2; ++j) {
        const T l = left.at(i, j) * scale;
        const T* urow = ut + j * m;
        for (std::size_t k = 0; k < m; ++k) yrow[k] += l * urow[k];
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> kron_rows_backward(const BasicTensor<T>& left, const BasicTensor<T>& right,
                                  const BasicTensor<T>& x, const BasicTensor<T>& dy, T scale,
                                  BasicTensor<T>* dleft, BasicTensor<T>* dright) {
  const std::size_t r1 = left.dim(0), r2 = left.dim(1), m = right.dim(0), n = right.dim(1);
  const std::size_t rows = x.dim(0);
  if (dy.shape() != Shape{rows, r1 * m}) throw ShapeError("kron_rows_backward: gradient shape");
  const BasicTensor<T> xs = x.reshaped({rows * r2, n});
  const BasicTensor<T> u = matmul_nt(xs, right);
  BasicTensor<T> du({rows * r2, m});
  for (std::size_t t = 0; t < rows; ++t) {
    const T* gt = dy.raw() + t * r1 * m;
    const T* ut = u.raw() + t * r2 * m;
    T* dut = du.raw() + t * r2 * m;
    for (std::size_t i = 0; i < r1; ++i) {
      const T* grow = gt + i * m;
      for (std::size_t j = 0; j < r2; ++j) {
        const T* urow = ut + j * m;
        T* durow = dut + j * m;
        const T l = left.at(i, j) * scale;
        T acc{0};
        for (std::size_t k = 0; k < m; ++k) {
          acc += grow[k] * urow[k];
          durow[k] += l * grow[k];
        }
        if (dleft) dleft->at(i, j) += scale * acc;
      }
    }
  }
  if (dright) matmul_tn_accumulate(du, xs, *dright);
  return matmul(du, right).reshaped({rows, r2 * n});
}

template <typename T>
LoraAdapter<T>::LoraAdapter(std::size_t p, std::size_t q, std::size_t rank, double s,
                            const std::string& prefix)
    : a(prefix + ".A", BasicTensor<T>({rank, q})),
      b(prefix + ".B", BasicTensor<T>({p, rank})),
      scale(static_cast<T>(s)) {}

template <typename T>
BasicTensor<T> LoraAdapter<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> y = matmul_nt(matmul_nt(x, a.value), b.value);
  scale_inplace(y, scale);
  return y;
}

template <typename T>
BasicTensor<T> LoraAdapter<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  const BasicTensor<T> gy = scaled(dy, scale);
  const BasicTensor<T> z = matmul_nt(x, a.value);  // n×r
  BasicTensor<T> dz = matmul(gy, b.value);         // n×r
  if (b.trainable) matmul_tn_accumulate(gy, z, b.grad);
  if (a.trainable) matmul_tn_accumulate(dz, x, a.grad);
  return matmul(dz, a.value);
}

template <typename T>
BasicTensor<T> LoraAdapter<T>::delta_weight() const {
  return scaled(matmul(b.value, a.value), scale);
}

template <typename T>
KronaAdapter<T>::KronaAdapter(std::size_t p, std::size_t q, std::size_t r1, std::size_t r2,
                              double s, const std::string& prefix)
    : a(prefix + ".A", BasicTensor<T>({r1, r2})),
      b(prefix + ".B", BasicTensor<T>({p / r1, q / r2})),
      scale(static_cast<T>(s)) {
  if (r1 == 0 || r2 == 0 || p % r1 != 0 || q % r2 != 0)
    throw ConfigError("KronA factor (" + std::to_string(r1) + "," + std::to_string(r2) +
                      ") does not tile " + std::to_string(p) + "x" + std::to_string(q));
}

template <typename T>
BasicTensor<T> KronaAdapter<T>::forward(const BasicTensor<T>& x) const {
  return kron_rows(a.value, b.value, x, scale);
}

template <typename T>
BasicTensor<T> KronaAdapter<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  return kron_rows_backward(a.value, b.value, x, dy, scale, a.trainable ? &a.grad : nullptr,
                            b.trainable ? &b.grad : nullptr);
}

template <typename T>
BasicTensor<T> KronaAdapter<T>::delta_weight() const {
  return scaled(kron(a.value, b.value), scale);
}

template <typename T>
LokrAdapter<T>::LokrAdapter(std::size_t p, std::size_t q, std::size_t factor, std::size_t rank,
                            double g, const std::string& prefix)
    : gamma(static_cast<T>(g)) {
  const LokrShape s = lokr_factorize(p, q, factor);
  c = Param<T>(prefix + ".C", BasicTensor<T>({s.up, s.uq}));
  a = Param<T>(prefix + ".A", BasicTensor<T>({rank, s.vq}));
  b = Param<T>(prefix + ".B", BasicTensor<T>({s.vp, rank}));
}

template <typename T>
BasicTensor<T> LokrAdapter<T>::forward(const BasicTensor<T>& x) const {
  return kron_rows(c.value, matmul(b.value, a.value), x, gamma);
}

template <typename T>
BasicTensor<T> LokrAdapter<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  const BasicTensor<T> right = matmul(b.value, a.value);
  BasicTensor<T> dright(right.shape());
  BasicTensor<T> dx = kron_rows_backward(c.value, right, x, dy, gamma,
                                         c.trainable ? &c.grad : nullptr, &dright);
  if (b.trainable) add_inplace(b.grad, matmul_nt(dright, a.value));
  if (a.trainable) matmul_tn_accumulate(b.value, dright, a.grad);
  return dx;
}

template <typename T>
BasicTensor<T> LokrAdapter<T>::delta_weight() const {
  return scaled(kron(c.value, matmul(b.value, a.value)), gamma);
}

template <typename T>
void attach(VitModel<T>& model, const AdapterSpec& spec, Rng& rng) {
  if (model.adapter_spec) throw ConfigError("adapters are already attached to this model");
  if (model.fused) throw ConfigError("cannot attach adapters to a fused model");
  const std::size_t d = model.config().embed_dim;
  spec.validate(d, d);

  model.set_all_trainable(spec.method == Method::Full);
  model.head.weight.trainable = true;
  model.head.bias.trainable = true;

  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    AttentionLayer<T>& attn = model.blocks[i].attn;
    if (spec.method == Method::BitFit) {
      attn.q_proj.bias.trainable = true;
      attn.v_proj.bias.trainable = true;
      continue;
    }
    if (!has_delta_weight(spec.method)) continue;
    const std::string prefix = "layer" + std::to_string(i);
    for (auto [slot, site] : {std::pair{&attn.q_delta, "q"}, std::pair{&attn.v_delta, "v"}}) {
      const std::string name = prefix + "." + site;
      if (uses_lora_factors(spec.method)) {
        auto ad = std::make_unique<LoraAdapter<T>>(d, d, spec.rank, spec.lora_scale(), name);
        fill_normal(ad->a.value, rng, spec.init_std);
        *slot = std::move(ad);
      } else if (uses_krona_factors(spec.method)) {
        const auto [r1, r2] = spec.krona_shape(d);
        auto ad = std::make_unique<KronaAdapter<T>>(d, d, r1, r2, spec.krona_scale, name);
        fill_normal(ad->a.value, rng, spec.init_std);
        *slot = std::move(ad);
      } else {
        auto ad = std::make_unique<LokrAdapter<T>>(d, d, spec.lokr_factor, spec.lokr_rank,
                                                   spec.lokr_gamma, name);
        fill_normal(ad->c.value, rng, spec.init_std);
        fill_normal(ad->a.value, rng, spec.init_std);
        *slot = std::move(ad);
      }
    }
  }
  model.adapter_spec = spec;
}

template <typename T>
std::size_t count_trainable_params(const VitModel<T>& model) {
  std::size_t n = 0;
  for (const Param<T>* p : model.all_params())
    if (p->trainable) n += p->size();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Param<T>*>> stored_tensors(VitModel<T>& model, bool include_head) {
  std::vector<std::pair<std::string, Param<T>*>> out;
  if (!model.adapter_spec) return out;
  const Method method = model.adapter_spec->method;
  if (method == Method::Full) {
    for (Param<T>* p : model.base_params())
      if (include_head || (p != &model.head.weight && p != &model.head.bias))
        out.emplace_back(p->name, p);
    return out;
  }
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    AttentionLayer<T>& attn = model.blocks[i].attn;
    const std::string prefix = "layer" + std::to_string(i);
    if (method == Method::BitFit) {
      out.emplace_back(prefix + ".q.bias", &attn.q_proj.bias);
      out.emplace_back(prefix + ".v.bias", &attn.v_proj.bias);
      continue;
    }
    for (DeltaAdapter<T>* ad : {attn.q_delta.get(), attn.v_delta.get()})
      if (ad)
        for (Param<T>* p : ad->params()) out.emplace_back(p->name, p);
  }
  if (include_head) {
    out.emplace_back("head.weight", &model.head.weight);
    out.emplace_back("head.bias", &model.head.bias);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Param<T>*>> stored_tensors(const VitModel<T>& model,
                                                                    bool include_head) {
  auto mut = stored_tensors(const_cast<VitModel<T>&>(model), include_head);
  return {mut.begin(), mut.end()};
}

template <typename T>
std::uint64_t adapter_storage_bytes(const VitModel<T>& model, bool include_head) {
  std::uint64_t n = 0;
  for (const auto& [name, p] : stored_tensors(model, include_head)) n += p->size();
  return 4 * n;
}

template <typename T>
void fuse(VitModel<T>& model) {
  if (!model.adapter_spec) throw ConfigError("fuse: no adapters attached");
  if (model.fused) throw ConfigError("fuse: adapters were already fused into this model");
  for (auto& block : model.blocks) {
    AttentionLayer<T>& attn = block.attn;
    for (auto [delta, lin] : {std::pair{&attn.q_delta, &attn.q_proj}, std::pair{&attn.v_delta, &attn.v_proj}}) {
      if (!*delta) continue;
      add_inplace(lin->weight.value, (*delta)->delta_weight());
      delta->reset();
    }
  }
  model.fused = true;
}

std::size_t closed_form_total_params(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim, hidden = cfg.mlp_ratio * d, k = cfg.n_classes;
  const std::size_t embed = cfg.token_features() * d + d;
  const std::size_t pos = (cfg.spatial_tokens() + cfg.spectral_groups()) * d;
  const std::size_t block = 4 * d + 4 * (d * d + d) + (hidden * d + hidden) + (d * hidden + d);
  return embed + pos + cfg.depth * block + 2 * d + (d * k + k);
}

std::size_t closed_form_trainable_params(const ModelConfig& cfg, const AdapterSpec& spec) {
  const std::size_t d = cfg.embed_dim, k = cfg.n_classes;
  const std::size_t head = d * k + k;
  const std::size_t sites = 2 * cfg.depth;
  spec.validate(d, d);
  switch (spec.method) {
    case Method::Full: return closed_form_total_params(cfg);
    case Method::LinearProbe: return head;
    case Method::BitFit: return sites * d + head;
    case Method::LoRA:
    case Method::LoRAPlus: return sites * (spec.rank * d + d * spec.rank) + head;
    case Method::KronA:
    case Method::KronAPlus: {
      const auto [r1, r2] = spec.krona_shape(d);
      return sites * (r1 * r2 + (d / r1) * (d / r2)) + head;
    }
    case Method::LoKr: {
      const LokrShape s = lokr_factorize(d, d, spec.lokr_factor);
      return sites * (s.up * s.uq + spec.lokr_rank * s.vq + s.vp * spec.lokr_rank) + head;
    }
  }
  throw ConfigError("unknown method");
}

CheckpointFile adapter_checkpoint(const VitModel<float>& model) {
  if (!model.adapter_spec) throw ConfigError("save_adapters: no adapters attached");
  if (model.fused) throw ConfigError("save_adapters: adapters were fused; save the full model instead");
  CheckpointFile file;
  file.method_id = static_cast<std::uint8_t>(model.adapter_spec->method);
  file.spec = model.adapter_spec->canonical_text();
  for (const auto& [name, p] : stored_tensors(model, true)) file.records.push_back({name, p->value});
  return file;
}

void save_adapters(const VitModel<float>& model, const std::string& path) {
  write_checkpoint(path, adapter_checkpoint(model));
}

void apply_adapter_checkpoint(const CheckpointFile& file, VitModel<float>& model) {
  if (file.method_id == kFullModelMethodId)
    throw DataError("checkpoint holds a full model, not adapters");
  if (!is_valid_method_id(file.method_id))
    throw DataError("checkpoint: unknown method id " + std::to_string(file.method_id));
  const AdapterSpec spec = AdapterSpec::parse_canonical(file.spec);
  if (static_cast<std::uint8_t>(spec.method) != file.method_id)
    throw DataError("checkpoint: method id does not match its spec block");
  if (!model.adapter_spec) {
    Rng rng(0);
    attach(model, spec, rng);
  } else if (model.adapter_spec->method != spec.method) {
    throw DataError("checkpoint method '" + std::string(method_name(spec.method)) +
                    "' does not match attached method '" +
                    std::string(method_name(model.adapter_spec->method)) + "'");
  }
  auto targets = stored_tensors(model, true);
  if (targets.size() != file.records.size())
    throw DataError("checkpoint has " + std::to_string(file.records.size()) +
                    " tensors, model expects " + std::to_string(targets.size()));
  for (auto& [name, p] : targets) {
    const TensorRecord* rec = file.find(name);
    if (!rec) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (rec->tensor.shape() != p->value.shape())
      throw DataError("shape mismatch for '" + name + "': checkpoint " +
                      shape_to_string(rec->tensor.shape()) + " vs model " +
                      shape_to_string(p->value.shape()));
  }
  for (auto& [name, p] : targets) p->value = file.find(name)->tensor;
}

void load_adapters(const std::string& path, VitModel<float>& model) {
  apply_adapter_checkpoint(read_checkpoint(path), model);
}

CheckpointFile full_model_checkpoint(const VitModel<float>& model) {
  if (!model.adapter_params().empty())
    throw ConfigError("fuse adapters before saving a full model");
  CheckpointFile file;
  file.method_id = kFullModelMethodId;
  file.spec = model.config().canonical_text();
  for (const Param<float>* p : model.base_params()) file.records.push_back({p->name, p->value});
  return file;
}

void save_full_model(const VitModel<float>& model, const std::string& path) {
  write_checkpoint(path, full_model_checkpoint(model));
}

namespace {

void copy_base_weights(const CheckpointFile& file, VitModel<float>& model, bool allow_new_head) {
  std::size_t used = 0;
  for (Param<float>* p : model.base_params()) {
    const TensorRecord* rec = file.find(p->name);
    const bool is_head = p == &model.head.weight || p == &model.head.bias;
    if (!rec) throw DataError("model checkpoint is missing tensor '" + p->name + "'");
    ++used;
    if (rec->tensor.shape() != p->value.shape()) {
      if (is_head && allow_new_head) continue;
      throw DataError("shape mismatch for '" + p->name + "': checkpoint " +
                      shape_to_string(rec->tensor.shape()) + " vs model " +
                      shape_to_string(p->value.shape()));
    }
    p->value = rec->tensor;
  }
  if (used != file.records.size()) throw DataError("model checkpoint has unexpected extra tensors");
}

}  // namespace

VitModel<float> load_full_model(const std::string& path) {
  const CheckpointFile file = read_checkpoint(path);
  if (file.method_id != kFullModelMethodId)
    throw DataError("'" + path + "' is an adapter checkpoint, not a full model");
  VitModel<float> model(ModelConfig::parse_canonical(file.spec));
  copy_base_weights(file, model, false);
  return model;
}

void load_base_weights(const std::string& path, VitModel<float>& model) {
  const CheckpointFile file = read_checkpoint(path);
  if (file.method_id != kFullModelMethodId)
    throw DataError("'" + path + "' is an adapter checkpoint, not a full model");
  const ModelConfig stored = ModelConfig::parse_canonical(file.spec);
  ModelConfig expect = model.config();
  expect.n_classes = stored.n_classes;
  expect.attn_dropout = stored.attn_dropout;
  if (stored.canonical_text() != expect.canonical_text())
    throw DataError("pretrained checkpoint architecture does not match the configured model");
  copy_base_weights(file, model, true);
}

#define PEFT_INSTANTIATE_ADAPTERS(T)                                                          \
  template class LoraAdapter<T>;                                                              \
  template class KronaAdapter<T>;                                                             \
  template class LokrAdapter<T>;                                                              \
  template BasicTensor<T> kron_rows(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                    const BasicTensor<T>&, T);                                \
  template BasicTensor<T> kron_rows_backward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                             const BasicTensor<T>&, const BasicTensor<T>&, T, \
                                             BasicTensor<T>*, BasicTensor<T>*);               \
  template void attach(VitModel<T>&, const AdapterSpec&, Rng&);                               \
  template std::size_t count_trainable_params(const VitModel<T>&);                            \
  template std::vector<std::pair<std::string, Param<T>*>> stored_tensors(VitModel<T>&, bool); \
  template std::vector<std::pair<std::string, const Param<T>*>> stored_tensors(               \
      const VitModel<T>&, bool);                                                              \
  template std::uint64_t adapter_storage_bytes(const VitModel<T>&, bool);                     \
  template void fuse(VitModel<T>&);

PEFT_INSTANTIATE_ADAPTERS(float)
PEFT_INSTANTIATE_ADAPTERS(double)

#undef PEFT_INSTANTIATE_ADAPTERS

}  // namespace peft
