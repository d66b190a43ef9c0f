#ifndef PEFT_PEFT_H
#define PEFT_PEFT_H

/* C interface to the PEFT hyperspectral toolkit.
 *
 * Every function returns a peft_status. On failure, peft_last_error()
 * describes the most recent error raised on the calling thread. Handles are
 * opaque and owned by the caller; release them with the matching *_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(PEFT_BUILDING_LIBRARY)
#    define PEFT_API __declspec(dllexport)
#  else
#    define PEFT_API __declspec(dllimport)
#  endif
#else
#  define PEFT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum peft_status {
  PEFT_OK = 0,
  PEFT_ERR_INTERNAL = 1,
  PEFT_ERR_CONFIG = 2,
  PEFT_ERR_DATA = 3,
  PEFT_ERR_NUMERIC = 4
} peft_status;

typedef struct peft_config peft_config;
typedef struct peft_model peft_model;

typedef struct peft_metrics {
  double oa;
  double aa;
  double kappa;
} peft_metrics;

typedef struct peft_count {
  uint64_t trainable;
  uint64_t total;
  uint64_t storage_bytes;
  double storage_mb;  /* decimal megabytes */
  double storage_mib; /* binary mebibytes */
} peft_count;

/* level: 0 = info, 1 = warning. */
typedef void (*peft_log_fn)(int level, const char* message, void* user);

PEFT_API const char* peft_version(void);
PEFT_API const char* peft_last_error(void);
/* NULL restores the default sink (stderr). */
PEFT_API void peft_set_log_callback(peft_log_fn fn, void* user);

/* ---- configuration ---- */
PEFT_API peft_status peft_config_new(peft_config** out);
PEFT_API peft_status peft_config_load(const char* path, peft_config** out);
PEFT_API peft_status peft_config_parse(const char* text, peft_config** out);
/* key is "section.key" (e.g. "train.epochs") or a top-level key ("seed"). */
PEFT_API peft_status peft_config_set(peft_config* cfg, const char* key, const char* value);
/* Canonical text; *len receives the size including the terminating NUL.
 * Call with buf == NULL to query the size. */
PEFT_API peft_status peft_config_text(const peft_config* cfg, char* buf, size_t* len);
/* Output directory, same buffer protocol as peft_config_text. */
PEFT_API peft_status peft_config_output_dir(const peft_config* cfg, char* buf, size_t* len);
PEFT_API void peft_config_free(peft_config* cfg);

/* ---- commands ---- */
PEFT_API peft_status peft_synth(const peft_config* cfg);
/* Writes train_log.csv, best.peft, last.peft, report.txt and metrics files
 * under the output directory. best/last may be NULL. */
PEFT_API peft_status peft_train(const peft_config* cfg, peft_metrics* best, peft_metrics* last);
PEFT_API peft_status peft_eval(const peft_config* cfg, const char* checkpoint, peft_metrics* out);
PEFT_API peft_status peft_fuse(const peft_config* cfg, const char* checkpoint, const char* out_path);
/* n_classes == 0 derives the class count from the configured data. */
PEFT_API peft_status peft_count_params(const peft_config* cfg, size_t n_classes, peft_count* out);
/* Writes sweep.csv under the output directory. n == 0 uses sweep.lambdas from the config. */
PEFT_API peft_status peft_sweep_lambda(const peft_config* cfg, const double* lambdas, size_t n);
PEFT_API peft_status peft_map(const peft_config* cfg, const char* checkpoint, const char* out_ppm);

/* ---- models ---- */
/* Base model (seeded init or pretrained weights) with the configured adapters attached. */
PEFT_API peft_status peft_model_create(const peft_config* cfg, size_t n_classes, peft_model** out);
PEFT_API peft_status peft_model_load_adapters(peft_model* model, const char* path);
PEFT_API peft_status peft_model_save_adapters(const peft_model* model, const char* path);
PEFT_API peft_status peft_model_fuse(peft_model* model);
PEFT_API peft_status peft_model_save_full(const peft_model* model, const char* path);
PEFT_API peft_status peft_model_load_full(const char* path, peft_model** out);
PEFT_API peft_status peft_model_count(const peft_model* model, peft_count* out);
/* input: input_hw × input_hw × bands floats (band fastest). logits: n_classes floats. */
PEFT_API peft_status peft_model_forward(const peft_model* model, const float* input, size_t input_len,
                                        float* logits, size_t logits_len);
PEFT_API peft_status peft_model_input_size(const peft_model* model, size_t* input_len, size_t* n_classes);
PEFT_API void peft_model_free(peft_model* model);

/* ---- metrics ---- */
/* counts: k×k row-major, rows = true class, columns = prediction. */
PEFT_API peft_status peft_metrics_from_confusion(const uint64_t* counts, size_t k, peft_metrics* out);

#ifdef __cplusplus
}
#endif

#endif /* PEFT_PEFT_H */
