#include "peft/peft.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "core/adapters.hpp"
#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/log.hpp"
#include "core/metrics.hpp"
#include "core/trainer.hpp"

struct peft_config {
  peft::RunConfig cfg;
};

struct peft_model {
  explicit peft_model(peft::VitModel<float> m) : model(std::move(m)) {}
  peft::VitModel<float> model;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
peft_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return PEFT_OK;
  } catch (const peft::ConfigError& e) {
    g_last_error = e.what();
    return PEFT_ERR_CONFIG;
  } catch (const peft::DataError& e) {
    g_last_error = e.what();
    return PEFT_ERR_DATA;
  } catch (const peft::NumericalError& e) {
    g_last_error = e.what();
    return PEFT_ERR_NUMERIC;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PEFT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PEFT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PEFT_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw peft::ConfigError(std::string(what) + " must not be NULL");
}

void fill(const peft::MetricsSummary& m, peft_metrics* out) {
  if (!out) return;
  out->oa = m.oa;
  out->aa = m.aa;
  out->kappa = m.kappa;
}

void fill(std::uint64_t trainable, std::uint64_t total, std::uint64_t bytes, peft_count* out) {
  out->trainable = trainable;
  out->total = total;
  out->storage_bytes = bytes;
  out->storage_mb = peft::to_decimal_mb(bytes);
  out->storage_mib = peft::to_mib(bytes);
}

void copy_out(const std::string& text, char* buf, size_t* len) {
  require(len, "len");
  const size_t need = text.size() + 1;
  if (buf) {
    if (*len < need) throw peft::ConfigError("buffer too small");
    std::memcpy(buf, text.c_str(), need);
  }
  *len = need;
}

}  // namespace

extern "C" {

const char* peft_version(void) { return "1.0.0"; }

const char* peft_last_error(void) { return g_last_error.c_str(); }

void peft_set_log_callback(peft_log_fn fn, void* user) {
  if (!fn) {
    peft::set_log_sink({});
    return;
  }
  peft::set_log_sink([fn, user](peft::LogLevel level, const std::string& msg) {
    fn(static_cast<int>(level), msg.c_str(), user);
  });
}

peft_status peft_config_new(peft_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new peft_config{};
  });
}

peft_status peft_config_load(const char* path, peft_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new peft_config{peft::load_run_config(path)};
  });
}

peft_status peft_config_parse(const char* text, peft_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new peft_config{peft::parse_run_config(text)};
  });
}

peft_status peft_config_set(peft_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

peft_status peft_config_text(const peft_config* cfg, char* buf, size_t* len) {
  return guarded([&] {
    require(cfg, "cfg");
    copy_out(cfg->cfg.canonical_text(), buf, len);
  });
}

peft_status peft_config_output_dir(const peft_config* cfg, char* buf, size_t* len) {
  return guarded([&] {
    require(cfg, "cfg");
    copy_out(cfg->cfg.output_dir, buf, len);
  });
}

void peft_config_free(peft_config* cfg) { delete cfg; }

peft_status peft_synth(const peft_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg");
    peft::run_synth(cfg->cfg);
  });
}

peft_status peft_train(const peft_config* cfg, peft_metrics* best, peft_metrics* last) {
  return guarded([&] {
    require(cfg, "cfg");
    const auto art = peft::run_train(cfg->cfg);
    fill(art.result.best, best);
    fill(art.result.last, last);
  });
}

peft_status peft_eval(const peft_config* cfg, const char* checkpoint, peft_metrics* out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(checkpoint, "checkpoint");
    fill(peft::run_eval(cfg->cfg, checkpoint), out);
  });
}

peft_status peft_fuse(const peft_config* cfg, const char* checkpoint, const char* out_path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(checkpoint, "checkpoint");
    require(out_path, "out_path");
    peft::run_fuse(cfg->cfg, checkpoint, out_path);
  });
}

peft_status peft_count_params(const peft_config* cfg, size_t n_classes, peft_count* out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    const auto r = peft::run_count(cfg->cfg, n_classes);
    fill(r.trainable, r.total, r.storage_bytes, out);
  });
}

peft_status peft_sweep_lambda(const peft_config* cfg, const double* lambdas, size_t n) {
  return guarded([&] {
    require(cfg, "cfg");
    if (n == 0) {
      peft::run_sweep_lambda(cfg->cfg, cfg->cfg.sweep_lambdas);
      return;
    }
    require(lambdas, "lambdas");
    peft::run_sweep_lambda(cfg->cfg, std::vector<double>(lambdas, lambdas + n));
  });
}

peft_status peft_map(const peft_config* cfg, const char* checkpoint, const char* out_ppm) {
  return guarded([&] {
    require(cfg, "cfg");
    require(checkpoint, "checkpoint");
    require(out_ppm, "out_ppm");
    peft::run_map(cfg->cfg, checkpoint, out_ppm);
  });
}

peft_status peft_model_create(const peft_config* cfg, size_t n_classes, peft_model** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    if (n_classes == 0) throw peft::ConfigError("n_classes must be positive");
    *out = new peft_model(peft::build_model(cfg->cfg, n_classes));
  });
}

peft_status peft_model_load_adapters(peft_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    peft::load_adapters(path, model->model);
  });
}

peft_status peft_model_save_adapters(const peft_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    peft::save_adapters(model->model, path);
  });
}

peft_status peft_model_fuse(peft_model* model) {
  return guarded([&] {
    require(model, "model");
    peft::fuse(model->model);
  });
}

peft_status peft_model_save_full(const peft_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    peft::save_full_model(model->model, path);
  });
}

peft_status peft_model_load_full(const char* path, peft_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new peft_model(peft::load_full_model(path));
  });
}

peft_status peft_model_count(const peft_model* model, peft_count* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    const auto& m = model->model;
    const std::uint64_t trainable = m.adapter_spec ? peft::count_trainable_params(m) : 0;
    fill(trainable, m.count_all_params(), m.adapter_spec ? peft::adapter_storage_bytes(m) : 0, out);
  });
}

peft_status peft_model_forward(const peft_model* model, const float* input, size_t input_len, float* logits,
                               size_t logits_len) {
  return guarded([&] {
    require(model, "model");
    require(input, "input");
    require(logits, "logits");
    const auto& c = model->model.config();
    const size_t need = c.input_hw * c.input_hw * c.input_bands;
    if (input_len != need)
      throw peft::ConfigError("input has " + std::to_string(input_len) + " values, expected " + std::to_string(need));
    if (logits_len != c.n_classes)
      throw peft::ConfigError("logits buffer has " + std::to_string(logits_len) + " slots, expected " +
                              std::to_string(c.n_classes));
    const peft::Tensor x({c.input_hw, c.input_hw, c.input_bands}, std::vector<float>(input, input + input_len));
    const peft::Tensor y = model->model.forward(x);
    std::memcpy(logits, y.raw(), logits_len * sizeof(float));
  });
}

peft_status peft_model_input_size(const peft_model* model, size_t* input_len, size_t* n_classes) {
  return guarded([&] {
    require(model, "model");
    const auto& c = model->model.config();
    if (input_len) *input_len = c.input_hw * c.input_hw * c.input_bands;
    if (n_classes) *n_classes = c.n_classes;
  });
}

void peft_model_free(peft_model* model) { delete model; }

peft_status peft_metrics_from_confusion(const uint64_t* counts, size_t k, peft_metrics* out) {
  return guarded([&] {
    require(counts, "counts");
    require(out, "out");
    peft::ConfusionMatrix cm(k, std::vector<std::uint64_t>(counts, counts + k * k));
    out->oa = peft::overall_accuracy(cm);
    out->aa = peft::average_accuracy(cm);
    out->kappa = peft::kappa(cm);
  });
}

}  // extern "C"
