#include "core/config.hpp"

#include <fstream>
#include <sstream>

#include "core/errors.hpp"
#include "core/text_util.hpp"

namespace peft {

namespace {

std::uint64_t parse_u64(std::string_view value, std::string_view key) {
  return static_cast<std::uint64_t>(parse_size(value, key));
}

std::vector<std::size_t> parse_size_list(std::string_view value, std::string_view key) {
  std::vector<std::size_t> out;
  for (const auto& item : split(value, ',')) {
    const std::string t = trim(item);
    if (t.empty()) continue;
    out.push_back(parse_size(t, key));
  }
  if (out.empty()) throw ConfigError(std::string(key) + ": empty list");
  return out;
}

NormMode parse_norm_mode(std::string_view value) {
  const std::string v = to_lower(trim(value));
  if (v == "standardize" || v == "zscore") return NormMode::Standardize;
  if (v == "minmax" || v == "min-max") return NormMode::MinMax;
  throw ConfigError("data.normalization must be 'standardize' or 'minmax', got '" + std::string(value) + "'");
}

std::string norm_mode_name(NormMode m) { return m == NormMode::MinMax ? "minmax" : "standardize"; }

template <typename V>
std::string join_list(const std::vector<V>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_floating_point_v<V>) os << format_double(values[i]);
    else os << values[i];
  }
  return os.str();
}

[[noreturn]] void unknown_key(std::string_view section, std::string_view key) {
  if (section.empty()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  throw ConfigError("unknown config key '" + std::string(key) + "' in [" + std::string(section) + "]");
}

void set_data(DataSection& d, const std::string& key, std::string_view v) {
  if (key == "cube") d.cube = trim(v);
  else if (key == "labels") d.labels = trim(v);
  else if (key == "synth_height") d.synth_height = parse_size(v, key);
  else if (key == "synth_width") d.synth_width = parse_size(v, key);
  else if (key == "synth_bands") d.synth_bands = parse_size(v, key);
  else if (key == "synth_classes") d.synth_classes = parse_size(v, key);
  else if (key == "synth_noise") d.synth_noise = parse_real(v, key);
  else if (key == "synth_seed") d.synth_seed = parse_u64(v, key);
  else if (key == "pca_components") d.pca_components = parse_size(v, key);
  else if (key == "patch_size") d.patch_size = parse_size(v, key);
  else if (key == "normalization") d.normalization = parse_norm_mode(v);
  else if (key == "norm_mean") d.norm_mean = parse_real_list(v, key);
  else if (key == "norm_std") d.norm_std = parse_real_list(v, key);
  else unknown_key("data", key);
}

void set_split(SplitSection& s, const std::string& key, std::string_view v) {
  if (key == "train_per_class") s.train_per_class = parse_size_list(v, key);
  else if (key == "seed") s.seed = parse_u64(v, key);
  else if (key == "file") s.file = trim(v);
  else unknown_key("split", key);
}

void set_model(ModelSection& m, const std::string& key, std::string_view v) {
  if (key == "preset") {
    m.preset = to_lower(trim(v));
    if (m.preset != "tiny" && m.preset != "base" && m.preset != "custom")
      throw ConfigError("model.preset must be tiny, base or custom");
  } else if (key == "embed_dim") m.embed_dim = parse_size(v, key);
  else if (key == "depth") m.depth = parse_size(v, key);
  else if (key == "heads") m.heads = parse_size(v, key);
  else if (key == "mlp_ratio") m.mlp_ratio = parse_size(v, key);
  else if (key == "token_hw") m.token_hw = parse_size(v, key);
  else if (key == "token_depth") m.token_depth = parse_size(v, key);
  else if (key == "token_stride") m.token_stride = parse_size(v, key);
  else if (key == "attn_dropout") m.attn_dropout = parse_real(v, key);
  else if (key == "pretrained") m.pretrained = trim(v);
  else if (key == "init_std") m.init_std = parse_real(v, key);
  else unknown_key("model", key);
}

void set_adapter(AdapterSpec& a, const std::string& key, std::string_view v) {
  if (key == "method") a.method = parse_method(trim(v));
  else if (key == "rank") a.rank = parse_size(v, key);
  else if (key == "alpha") a.alpha = parse_real(v, key);
  else if (key == "krona_rows") a.krona_rows = parse_size(v, key);
  else if (key == "krona_cols") a.krona_cols = parse_size(v, key);
  else if (key == "krona_scale") a.krona_scale = parse_real(v, key);
  else if (key == "lokr_factor") a.lokr_factor = parse_size(v, key);
  else if (key == "lokr_rank") a.lokr_rank = parse_size(v, key);
  else if (key == "lokr_gamma") a.lokr_gamma = parse_real(v, key);
  else if (key == "lambda") a.lambda = parse_real(v, key);
  else if (key == "init_std") a.init_std = parse_real(v, key);
  else unknown_key("adapter", key);
}

void set_optim(OptimizerConfig& o, AdapterSpec& a, const std::string& key, std::string_view v) {
  if (key == "lr") o.lr = parse_real(v, key);
  else if (key == "lambda") a.lambda = parse_real(v, key);
  else if (key == "weight_decay") o.weight_decay = parse_real(v, key);
  else if (key == "beta1") o.beta1 = parse_real(v, key);
  else if (key == "beta2") o.beta2 = parse_real(v, key);
  else if (key == "eps") o.eps = parse_real(v, key);
  else if (key == "warmup_steps") o.warmup_steps = parse_size(v, key);
  else unknown_key("optim", key);
}

void set_train(TrainSection& t, const std::string& key, std::string_view v) {
  if (key == "epochs") t.epochs = parse_size(v, key);
  else if (key == "batch_size") t.batch_size = parse_size(v, key);
  else if (key == "augment") t.augment = parse_bool(v, key);
  else if (key == "eval_every") t.eval_every = parse_size(v, key);
  else if (key == "eval_subset") t.eval_subset = parse_size(v, key);
  else if (key == "threads") t.threads = parse_size(v, key);
  else unknown_key("train", key);
}

void set_augment(AugmentConfig& a, const std::string& key, std::string_view v) {
  if (key == "hflip_prob") a.hflip_prob = parse_real(v, key);
  else if (key == "vflip_prob") a.vflip_prob = parse_real(v, key);
  else if (key == "radiation_prob") a.radiation_prob = parse_real(v, key);
  else if (key == "radiation_alpha_min") a.radiation_alpha_min = parse_real(v, key);
  else if (key == "radiation_alpha_max") a.radiation_alpha_max = parse_real(v, key);
  else if (key == "noise_std") a.noise_std = parse_real(v, key);
  else if (key == "mixture_prob") a.mixture_prob = parse_real(v, key);
  else if (key == "mixture_self_weight") a.mixture_self_weight = parse_real(v, key);
  else unknown_key("augment", key);
}

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + name + " must lie in [0, 1]");
}

}  // namespace

ModelConfig ModelSection::resolve(std::size_t n_classes, std::size_t bands) const {
  ModelConfig c = preset == "tiny" ? ModelConfig::tiny(n_classes) : ModelConfig::base(n_classes);
  if (preset == "custom" && !(embed_dim && depth && heads))
    throw ConfigError("model.preset = custom requires embed_dim, depth and heads");
  c.input_bands = bands;
  if (embed_dim) c.embed_dim = *embed_dim;
  if (depth) c.depth = *depth;
  if (heads) c.heads = *heads;
  if (mlp_ratio) c.mlp_ratio = *mlp_ratio;
  if (token_hw) c.token_hw = *token_hw;
  if (token_depth) c.token_depth = *token_depth;
  if (token_stride) c.token_stride = *token_stride;
  if (attn_dropout) c.attn_dropout = *attn_dropout;
  c.validate();
  return c;
}

void RunConfig::set(std::string_view dotted_key, std::string_view value) {
  const std::string full = to_lower(trim(dotted_key));
  const auto dot = full.find('.');
  const std::string section = dot == std::string::npos ? std::string() : full.substr(0, dot);
  const std::string key = dot == std::string::npos ? full : full.substr(dot + 1);
  if (key.empty()) throw ConfigError("empty config key");

  if (section.empty() || section == "run") {
    if (key == "seed") seed = parse_u64(value, key);
    else if (key == "output_dir" || key == "out") output_dir = trim(value);
    else unknown_key(section, key);
  } else if (section == "data") set_data(data, key, value);
  else if (section == "split") set_split(split, key, value);
  else if (section == "model") set_model(model, key, value);
  else if (section == "adapter") set_adapter(adapter, key, value);
  else if (section == "optim") set_optim(optim, adapter, key, value);
  else if (section == "train") set_train(train, key, value);
  else if (section == "augment") set_augment(augment, key, value);
  else if (section == "output") {
    if (key == "dir") output_dir = trim(value);
    else unknown_key(section, key);
  } else if (section == "sweep") {
    if (key == "lambdas") sweep_lambdas = parse_real_list(value, key);
    else unknown_key(section, key);
  } else {
    throw ConfigError("unknown config section [" + section + "]");
  }
}

void RunConfig::validate() const {
  if (data.cube.empty() != data.labels.empty())
    throw ConfigError("data.cube and data.labels must be given together");
  if (data.uses_synth()) {
    if (data.synth_classes == 0 || data.synth_classes > 64)
      throw ConfigError("data.synth_classes must lie in [1, 64]");
    if (data.synth_height == 0 || data.synth_width == 0 || data.synth_bands == 0)
      throw ConfigError("synthetic cube dimensions must be positive");
    if (!(data.synth_noise >= 0.0)) throw ConfigError("data.synth_noise must be >= 0");
  }
  if (data.pca_components == 0) throw ConfigError("data.pca_components must be positive");
  if (data.patch_size == 0 || data.patch_size % 2 == 0)
    throw ConfigError("data.patch_size must be odd, got " + std::to_string(data.patch_size));
  if (data.norm_mean.empty() != data.norm_std.empty())
    throw ConfigError("data.norm_mean and data.norm_std must be given together");
  if (!data.norm_mean.empty() && (data.norm_mean.size() != data.pca_components ||
                                  data.norm_std.size() != data.pca_components))
    throw ConfigError("data.norm_mean/norm_std need one value per PCA component");
  if (!data.norm_mean.empty() && data.normalization != NormMode::Standardize)
    throw ConfigError("data.norm_mean/norm_std only apply to standardize normalization");
  if (split.train_per_class.empty()) throw ConfigError("split.train_per_class is empty");
  for (auto n : split.train_per_class)
    if (n == 0) throw ConfigError("split.train_per_class entries must be positive");
  if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train.eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (train.threads == 0) throw ConfigError("train.threads must be positive");
  if (model.preset != "tiny" && model.preset != "base" && model.preset != "custom")
    throw ConfigError("model.preset must be tiny, base or custom");
  if (!(model.init_std > 0.0)) throw ConfigError("model.init_std must be positive");
  if (output_dir.empty()) throw ConfigError("output directory is empty");
  check_prob(augment.hflip_prob, "hflip_prob");
  check_prob(augment.vflip_prob, "vflip_prob");
  check_prob(augment.radiation_prob, "radiation_prob");
  check_prob(augment.mixture_prob, "mixture_prob");
  check_prob(augment.mixture_self_weight, "mixture_self_weight");
  if (!(augment.radiation_alpha_min <= augment.radiation_alpha_max))
    throw ConfigError("augment.radiation_alpha_min exceeds radiation_alpha_max");
  if (!(augment.noise_std >= 0.0)) throw ConfigError("augment.noise_std must be >= 0");
  optim.validate();
  if (adapter.lambda < 1.0)
    throw ConfigError("lambda must be >= 1, got " + format_double(adapter.lambda));
}

std::string RunConfig::canonical_text() const {
  std::ostringstream os;
  os << "seed = " << seed << "\n\n[data]\n";
  if (!data.uses_synth()) {
    os << "cube = " << data.cube << '\n' << "labels = " << data.labels << '\n';
  } else {
    os << "synth_height = " << data.synth_height << '\n'
       << "synth_width = " << data.synth_width << '\n'
       << "synth_bands = " << data.synth_bands << '\n'
       << "synth_classes = " << data.synth_classes << '\n'
       << "synth_noise = " << format_double(data.synth_noise) << '\n'
       << "synth_seed = " << data.synth_seed << '\n';
  }
  os << "pca_components = " << data.pca_components << '\n'
     << "patch_size = " << data.patch_size << '\n'
     << "normalization = " << norm_mode_name(data.normalization) << '\n';
  if (!data.norm_mean.empty())
    os << "norm_mean = " << join_list(data.norm_mean) << '\n' << "norm_std = " << join_list(data.norm_std) << '\n';

  os << "\n[split]\ntrain_per_class = " << join_list(split.train_per_class) << '\n'
     << "seed = " << split_seed() << '\n';
  if (!split.file.empty()) os << "file = " << split.file << '\n';

  os << "\n[model]\npreset = " << model.preset << '\n';
  auto opt = [&os](const char* k, const std::optional<std::size_t>& v) {
    if (v) os << k << " = " << *v << '\n';
  };
  opt("embed_dim", model.embed_dim);
  opt("depth", model.depth);
  opt("heads", model.heads);
  opt("mlp_ratio", model.mlp_ratio);
  opt("token_hw", model.token_hw);
  opt("token_depth", model.token_depth);
  opt("token_stride", model.token_stride);
  if (model.attn_dropout) os << "attn_dropout = " << format_double(*model.attn_dropout) << '\n';
  if (!model.pretrained.empty()) os << "pretrained = " << model.pretrained << '\n';
  os << "init_std = " << format_double(model.init_std) << '\n';

  os << "\n[adapter]\n" << adapter.canonical_text();

  os << "\n[optim]\nlr = " << format_double(optim.lr) << '\n'
     << "weight_decay = " << format_double(optim.weight_decay) << '\n'
     << "beta1 = " << format_double(optim.beta1) << '\n'
     << "beta2 = " << format_double(optim.beta2) << '\n'
     << "eps = " << format_double(optim.eps) << '\n'
     << "warmup_steps = " << optim.warmup_steps << '\n';

  os << "\n[train]\nepochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "augment = " << (train.augment ? "true" : "false") << '\n'
     << "eval_every = " << train.eval_every << '\n'
     << "eval_subset = " << train.eval_subset << '\n'
     << "threads = " << train.threads << '\n';

  os << "\n[augment]\nhflip_prob = " << format_double(augment.hflip_prob) << '\n'
     << "vflip_prob = " << format_double(augment.vflip_prob) << '\n'
     << "radiation_prob = " << format_double(augment.radiation_prob) << '\n'
     << "radiation_alpha_min = " << format_double(augment.radiation_alpha_min) << '\n'
     << "radiation_alpha_max = " << format_double(augment.radiation_alpha_max) << '\n'
     << "noise_std = " << format_double(augment.noise_std) << '\n'
     << "mixture_prob = " << format_double(augment.mixture_prob) << '\n'
     << "mixture_self_weight = " << format_double(augment.mixture_self_weight) << '\n';

  if (!sweep_lambdas.empty()) os << "\n[sweep]\nlambdas = " << join_list(sweep_lambdas) << '\n';
  os << "\n[output]\ndir = " << output_dir << '\n';
  return os.str();
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (const auto hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = to_lower(trim(std::string_view(line).substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      cfg.set(section.empty() ? key : section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace peft
