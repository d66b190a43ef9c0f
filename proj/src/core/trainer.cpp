#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "core/adapters.hpp"
#include "core/checkpoint.hpp"
#include "core/errors.hpp"
#include "core/hsi_io.hpp"
#include "core/log.hpp"
#include "core/optimizer.hpp"
#include "core/text_util.hpp"

namespace peft {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path + "'");
}

// Evenly strided subset of [0, n) with at most `limit` entries (all when limit is 0 or ≥ n).
std::vector<std::size_t> strided_indices(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> idx;
  if (limit == 0 || limit >= n) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  idx.reserve(limit);
  for (std::size_t i = 0; i < limit; ++i) idx.push_back(i * n / limit);
  return idx;
}

std::vector<std::size_t> predict_test(const VitModel<float>& model, const PreparedData& data,
                                      const std::vector<std::size_t>& indices, std::size_t threads) {
  std::vector<std::size_t> pred(indices.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const PixelCoord& c = data.test_coords[indices[i]];
      pred[i] = predict(model, data.make_patch(c.row, c.col));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, indices.size()));
  if (threads == 1) {
    work(0, indices.size());
    return pred;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (indices.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = std::min(indices.size(), t * chunk), e = std::min(indices.size(), b + chunk);
    pool.emplace_back(work, b, e);
  }
  for (auto& th : pool) th.join();
  return pred;
}

ConfusionMatrix confusion(const PreparedData& data, const std::vector<std::size_t>& indices,
                          const std::vector<std::size_t>& pred) {
  ConfusionMatrix cm(data.class_count());
  for (std::size_t i = 0; i < indices.size(); ++i) cm.add(data.test_y[indices[i]], pred[i]);
  return cm;
}

std::string metrics_cells(const std::optional<MetricsSummary>& m) {
  if (!m) return ",,";
  return format_double(m->oa) + "," + format_double(m->aa) + "," + format_double(m->kappa);
}

// Adapter checkpoint, or a full-model checkpoint, on top of the configured base.
VitModel<float> model_from_checkpoint(const RunConfig& cfg, const std::string& path, std::size_t n_classes) {
  const CheckpointFile file = read_checkpoint(path);
  if (file.method_id == kFullModelMethodId) {
    VitModel<float> model = load_full_model(path);
    if (model.config().n_classes != n_classes)
      throw DataError("model checkpoint has " + std::to_string(model.config().n_classes) +
                      " classes, the data has " + std::to_string(n_classes));
    return model;
  }
  VitModel<float> model = build_base_model(cfg, n_classes);
  apply_adapter_checkpoint(file, model);
  return model;
}

std::size_t data_class_count(const RunConfig& cfg) {
  if (cfg.data.uses_synth()) return cfg.data.synth_classes;
  return load_cube(cfg).class_count();
}

}  // namespace

Tensor PreparedData::make_patch(std::size_t row, std::size_t col) const {
  return normalize(resize_bilinear(extract_patch(reduced, row, col, patch_size), input_hw), stats);
}

HsiCube load_cube(const RunConfig& cfg) {
  if (cfg.data.uses_synth()) {
    const DataSection& d = cfg.data;
    return synth_cube(d.synth_height, d.synth_width, d.synth_bands, d.synth_classes, d.synth_noise, d.synth_seed);
  }
  return read_cube(cfg.data.cube, cfg.data.labels);
}

PreparedData prepare_data(const RunConfig& cfg) {
  cfg.validate();
  HsiCube cube = load_cube(cfg);
  cube.validate();
  PcaResult pca = pca_reduce(cube, cfg.data.pca_components);

  PreparedData data;
  data.reduced = std::move(pca.cube);
  data.explained_variance_ratio = std::move(pca.explained_variance_ratio);
  data.patch_size = cfg.data.patch_size;
  data.input_hw = ModelConfig{}.input_hw;
  if (!cfg.split.file.empty()) {
    data.split = read_split_file(cfg.split.file, data.reduced);
  } else {
    data.split = build_split(data.reduced, cfg.split.train_per_class, cfg.split_seed());
  }
  data.split.validate(data.reduced);

  std::vector<Tensor> raw;
  for (std::size_t c = 0; c < data.split.class_count(); ++c)
    for (const PixelCoord& p : data.split.train[c]) {
      raw.push_back(resize_bilinear(extract_patch(data.reduced, p.row, p.col, data.patch_size), data.input_hw));
      data.train_y.push_back(c);
    }
  if (raw.empty()) throw DataError("training split is empty");

  if (cfg.data.normalization == NormMode::MinMax) data.stats = minmax_stats(data.reduced);
  else if (!cfg.data.norm_mean.empty()) data.stats = user_standardize_stats(cfg.data.norm_mean, cfg.data.norm_std);
  else data.stats = standardize_stats(raw);

  data.train_x.reserve(raw.size());
  for (const Tensor& t : raw) data.train_x.push_back(normalize(t, data.stats));
  for (std::size_t c = 0; c < data.split.class_count(); ++c)
    for (const PixelCoord& p : data.split.test[c]) {
      data.test_coords.push_back(p);
      data.test_y.push_back(c);
    }
  return data;
}

VitModel<float> build_base_model(const RunConfig& cfg, std::size_t n_classes) {
  VitModel<float> model(cfg.model.resolve(n_classes, cfg.data.pca_components));
  Rng rng = stream_rng(cfg.seed, RngStream::ModelInit);
  model.initialize(rng, cfg.model.init_std);
  if (!cfg.model.pretrained.empty()) load_base_weights(cfg.model.pretrained, model);
  return model;
}

VitModel<float> build_model(const RunConfig& cfg, std::size_t n_classes) {
  VitModel<float> model = build_base_model(cfg, n_classes);
  Rng rng = stream_rng(cfg.seed, RngStream::AdapterInit);
  attach(model, cfg.adapter, rng);
  return model;
}

std::size_t predict(const VitModel<float>& model, const Tensor& patch) {
  const Tensor logits = model.forward(patch);
  const auto& v = logits.data();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

ConfusionMatrix evaluate(const VitModel<float>& model, const PreparedData& data, std::size_t threads,
                         std::size_t limit) {
  const auto indices = strided_indices(data.test_coords.size(), limit);
  return confusion(data, indices, predict_test(model, data, indices, threads));
}

TrainResult train(const RunConfig& cfg, const PreparedData& data, VitModel<float>& model) {
  if (!model.adapter_spec) throw ConfigError("train: no adapters attached");
  if (data.test_coords.empty()) throw DataError("test split is empty; nothing to evaluate");
  const AdapterSpec& spec = *model.adapter_spec;
  AdamW<float> opt(build_groups(model, spec, cfg.optim), cfg.optim);
  model.zero_grad();

  const std::size_t n = data.train_x.size();
  const std::size_t k = data.class_count();
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < n; ++i) by_class[data.train_y[i]].push_back(i);

  const auto subset = strided_indices(data.test_coords.size(), cfg.train.eval_subset);
  const auto all_test = strided_indices(data.test_coords.size(), 0);
  const bool dropout = model.config().attn_dropout > 0.0;

  TrainResult result;
  double best_oa = -1.0;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = stream_rng(cfg.seed, RngStream::Shuffle, epoch);
    std::shuffle(order.begin(), order.end(), shuffle);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.train.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + cfg.train.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      double batch_loss = 0.0;
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t idx = order[s];
        Tensor x = data.train_x[idx];
        if (cfg.train.augment) {
          std::vector<const Tensor*> others;
          for (std::size_t j : by_class[data.train_y[idx]])
            if (j != idx) others.push_back(&data.train_x[j]);
          Rng aug = stream_rng(cfg.seed, RngStream::Augment, epoch, idx);
          x = augment(x, others, aug, cfg.augment);
        }
        VitModel<float>::Cache cache;
        Rng drop = stream_rng(cfg.seed, RngStream::Dropout, epoch, idx);
        const Tensor logits = model.forward(x, &cache, dropout ? &drop : nullptr);
        auto ce = cross_entropy(logits, data.train_y[idx]);
        if (!std::isfinite(ce.loss))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index) + " (training sample " + std::to_string(idx) + ")");
        batch_loss += ce.loss;
        scale_inplace(ce.dlogits, inv_batch);
        model.backward(cache, ce.dlogits);
      }
      try {
        opt.step();
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                             e.what());
      }
      opt.zero_grad();
      ++result.steps;
      epoch_loss += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss / static_cast<double>(n);
    const bool last = epoch == cfg.train.epochs;
    if (epoch % cfg.train.eval_every == 0 || last) {
      // The final epoch always predicts the whole test split; selection uses
      // the same subset every epoch.
      const auto& indices = last ? all_test : subset;
      const auto pred = predict_test(model, data, indices, cfg.train.threads);
      MetricsSummary sel;
      if (last && subset.size() != all_test.size()) {
        std::vector<std::size_t> sub_pred;
        sub_pred.reserve(subset.size());
        for (std::size_t i : subset) sub_pred.push_back(pred[i]);
        sel = summarize(confusion(data, subset, sub_pred));
        result.last = summarize(confusion(data, all_test, pred));
      } else {
        sel = summarize(confusion(data, indices, pred));
        if (last) result.last = sel;
      }
      rec.metrics = sel;
      if (sel.oa > best_oa) {
        best_oa = sel.oa;
        result.best_epoch = epoch;
        result.best = sel;
        result.best_checkpoint = encode_checkpoint(adapter_checkpoint(model));
      }
      log_info("epoch " + std::to_string(epoch) + "  loss " + format_fixed(rec.loss, 4) + "  OA " +
               format_fixed(100.0 * sel.oa, 2));
    } else {
      log_info("epoch " + std::to_string(epoch) + "  loss " + format_fixed(rec.loss, 4));
    }
    result.epochs.push_back(rec);
  }

  result.last_checkpoint = encode_checkpoint(adapter_checkpoint(model));
  if (result.best_epoch == cfg.train.epochs) {
    result.best = result.last;
  } else if (subset.size() != all_test.size()) {
    // Best was selected on the subset; report it on the full split.
    apply_adapter_checkpoint(decode_checkpoint(result.best_checkpoint), model);
    result.best = summarize(evaluate(model, data, cfg.train.threads));
    apply_adapter_checkpoint(decode_checkpoint(result.last_checkpoint), model);
  }
  return result;
}

std::string format_epoch_csv(const std::vector<EpochRecord>& epochs) {
  std::ostringstream os;
  os << "epoch,loss,oa,aa,kappa\n";
  for (const auto& e : epochs) os << e.epoch << ',' << format_double(e.loss) << ',' << metrics_cells(e.metrics) << '\n';
  return os.str();
}

SynthPaths run_synth(const RunConfig& cfg) {
  const DataSection& d = cfg.data;
  if (d.synth_classes == 0 || d.synth_classes > 64) throw ConfigError("synth: classes must lie in [1, 64]");
  if (d.synth_height == 0 || d.synth_width == 0 || d.synth_bands == 0)
    throw ConfigError("synth: cube dimensions must be positive");
  if (!(d.synth_noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  SynthPaths paths{d.cube, d.labels};
  if (paths.cube.empty() || paths.labels.empty()) {
    ensure_dir(cfg.output_dir);
    paths = {join_path(cfg.output_dir, "synth.hsic"), join_path(cfg.output_dir, "synth.hsgt")};
  }
  const HsiCube cube = synth_cube(d.synth_height, d.synth_width, d.synth_bands, d.synth_classes, d.synth_noise, d.synth_seed);
  write_cube_file(paths.cube, cube);
  write_label_file(paths.labels, cube);
  return paths;
}

TrainArtifacts run_train(const RunConfig& cfg) {
  const PreparedData data = prepare_data(cfg);
  VitModel<float> model = build_model(cfg, data.class_count());
  log_info("training " + std::string(method_name(cfg.adapter.method)) + ": " +
           std::to_string(count_trainable_params(model)) + " trainable parameters, " +
           std::to_string(data.train_x.size()) + " training / " + std::to_string(data.test_coords.size()) +
           " test pixels");

  TrainArtifacts art;
  art.result = train(cfg, data, model);
  ensure_dir(cfg.output_dir);
  art.log_path = join_path(cfg.output_dir, "train_log.csv");
  art.best_path = join_path(cfg.output_dir, "best.peft");
  art.last_path = join_path(cfg.output_dir, "last.peft");
  art.report_path = join_path(cfg.output_dir, "report.txt");
  write_text(join_path(cfg.output_dir, "config.txt"), cfg.canonical_text());
  write_text(art.log_path, format_epoch_csv(art.result.epochs));
  write_file_bytes(art.best_path, art.result.best_checkpoint);
  write_file_bytes(art.last_path, art.result.last_checkpoint);
  write_text(join_path(cfg.output_dir, "metrics_best.kv"), format_metrics_kv(art.result.best));
  write_text(join_path(cfg.output_dir, "metrics_last.kv"), format_metrics_kv(art.result.last));

  std::ostringstream report;
  report << "method: " << method_name(cfg.adapter.method) << '\n'
         << "trainable parameters: " << count_trainable_params(model) << '\n'
         << "optimizer steps: " << art.result.steps << '\n'
         << "best checkpoint: epoch " << art.result.best_epoch << " (selected by test OA)\n\n"
         << "== best epoch ==\n" << format_metrics_table(art.result.best) << '\n'
         << "== last epoch ==\n" << format_metrics_table(art.result.last);
  write_text(art.report_path, report.str());
  return art;
}

MetricsSummary run_eval(const RunConfig& cfg, const std::string& checkpoint) {
  const PreparedData data = prepare_data(cfg);
  const VitModel<float> model = model_from_checkpoint(cfg, checkpoint, data.class_count());
  return summarize(evaluate(model, data, cfg.train.threads));
}

void run_fuse(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_path) {
  const CheckpointFile file = read_checkpoint(checkpoint);
  if (file.method_id == kFullModelMethodId) throw DataError("'" + checkpoint + "' is already a full model");
  const std::size_t k = [&] {
    const TensorRecord* head = file.find("head.bias");
    if (!head) throw DataError("checkpoint has no head.bias record");
    return head->tensor.size();
  }();
  VitModel<float> model = build_base_model(cfg, k);
  apply_adapter_checkpoint(file, model);
  fuse(model);
  // Fusion leaves no adapter factors behind, so the result is a plain model.
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  save_full_model(model, out_path);
}

std::string CountReport::format() const {
  std::ostringstream os;
  os << "method = " << method_name(method) << '\n'
     << "classes = " << n_classes << '\n'
     << "trainable_params = " << trainable << '\n'
     << "trainable_params_m = " << format_fixed(trainable_millions(), 3) << '\n'
     << "total_params = " << total << '\n'
     << "total_params_m = " << format_fixed(static_cast<double>(total) * 1e-6, 3) << '\n'
     << "storage_bytes = " << storage_bytes << '\n'
     << "storage_mb = " << format_fixed(to_decimal_mb(storage_bytes), 4) << '\n'
     << "storage_mib = " << format_fixed(to_mib(storage_bytes), 4) << '\n';
  return os.str();
}

CountReport run_count(const RunConfig& cfg, std::size_t n_classes) {
  if (n_classes == 0) n_classes = data_class_count(cfg);
  const ModelConfig mc = cfg.model.resolve(n_classes, cfg.data.pca_components);
  CountReport r;
  r.method = cfg.adapter.method;
  r.n_classes = n_classes;
  r.trainable = closed_form_trainable_params(mc, cfg.adapter);
  r.total = closed_form_total_params(mc);
  // Every trainable scalar, head included, is stored at 4 bytes.
  r.storage_bytes = 4ull * r.trainable;
  return r;
}

std::vector<SweepRow> run_sweep_lambda(const RunConfig& cfg, std::vector<double> lambdas) {
  if (lambdas.empty()) throw ConfigError("sweep-lambda: empty lambda list");
  if (!is_plus_variant(cfg.adapter.method))
    throw ConfigError("sweep-lambda requires method lora+ or krona+");
  std::sort(lambdas.begin(), lambdas.end());
  const auto dup = std::unique(lambdas.begin(), lambdas.end());
  if (dup != lambdas.end()) {
    log_warning("sweep-lambda: dropped " + std::to_string(lambdas.end() - dup) + " duplicate lambda value(s)");
    lambdas.erase(dup, lambdas.end());
  }
  for (double l : lambdas)
    if (!(l >= 1.0)) throw ConfigError("sweep-lambda: lambda must be >= 1, got " + format_double(l));

  const PreparedData data = prepare_data(cfg);
  std::vector<SweepRow> rows;
  for (double l : lambdas) {
    RunConfig run = cfg;
    run.adapter.lambda = l;
    run.output_dir = join_path(cfg.output_dir, "lambda_" + format_double(l));
    VitModel<float> model = build_model(run, data.class_count());
    TrainResult r = train(run, data, model);
    ensure_dir(run.output_dir);
    write_text(join_path(run.output_dir, "train_log.csv"), format_epoch_csv(r.epochs));
    write_file_bytes(join_path(run.output_dir, "last.peft"), r.last_checkpoint);
    rows.push_back({l, r.last});
  }
  ensure_dir(cfg.output_dir);
  write_text(join_path(cfg.output_dir, "sweep.csv"), format_sweep_csv(rows));
  return rows;
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "lambda,oa,aa,kappa\n";
  for (const auto& r : rows) os << format_double(r.lambda) << ',' << metrics_cells(r.metrics) << '\n';
  return os.str();
}

std::array<std::uint8_t, 3> class_color(std::size_t label, std::size_t classes) {
  if (label == 0 || classes == 0) return {0, 0, 0};
  const double h = 360.0 * static_cast<double>(label - 1) / static_cast<double>(classes);
  // Hexagonal HSV → RGB with s = v = 1.
  const double hp = h / 60.0;
  const double x = 1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  auto q = [](double c) { return static_cast<std::uint8_t>(std::lround(255.0 * c)); };
  return {q(r), q(g), q(b)};
}

void run_map(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_path) {
  const PreparedData data = prepare_data(cfg);
  const VitModel<float> model = model_from_checkpoint(cfg, checkpoint, data.class_count());
  const HsiCube& cube = data.reduced;
  const std::size_t k = data.class_count();

  std::ostringstream header;
  header << "P6\n" << cube.width << ' ' << cube.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.reserve(bytes.size() + 3 * cube.width * cube.height);
  for (std::size_t r = 0; r < cube.height; ++r)
    for (std::size_t c = 0; c < cube.width; ++c) {
      std::size_t label = 0;
      if (cube.label(r, c) != 0) label = predict(model, data.make_patch(r, c)) + 1;
      const auto rgb = class_color(label, k);
      bytes.insert(bytes.end(), rgb.begin(), rgb.end());
    }
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  write_file_bytes(out_path, bytes);
}

}  // namespace peft
