#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/hsi.hpp"
#include "core/metrics.hpp"
#include "core/vit.hpp"

namespace peft {

// Everything the training loop consumes, derived deterministically from a RunConfig.
struct PreparedData {
  HsiCube reduced;  // after PCA
  std::vector<double> explained_variance_ratio;
  SplitTable split;
  NormStats stats;
  std::size_t patch_size = 0;
  std::size_t input_hw = 32;

  // Training patches (normalized, class-major in split order), 0-based labels.
  std::vector<Tensor> train_x;
  std::vector<std::size_t> train_y;
  // Test pixels; their patches are built on demand.
  std::vector<PixelCoord> test_coords;
  std::vector<std::size_t> test_y;

  std::size_t class_count() const { return split.class_count(); }
  // extract → resize → normalize for an arbitrary pixel.
  Tensor make_patch(std::size_t row, std::size_t col) const;
};

HsiCube load_cube(const RunConfig& cfg);
PreparedData prepare_data(const RunConfig& cfg);

// Base model from the run seed (or the pretrained checkpoint), no adapters.
VitModel<float> build_base_model(const RunConfig& cfg, std::size_t n_classes);
// Base model with fresh adapters attached per cfg.adapter.
VitModel<float> build_model(const RunConfig& cfg, std::size_t n_classes);

std::size_t predict(const VitModel<float>& model, const Tensor& patch);
// Confusion matrix over the first `limit` test pixels (0 = all), spread
// over `threads` workers; the result does not depend on the thread count.
ConfusionMatrix evaluate(const VitModel<float>& model, const PreparedData& data, std::size_t threads = 1,
                         std::size_t limit = 0);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<MetricsSummary> metrics;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  MetricsSummary best;  // full test split, best-by-OA weights
  MetricsSummary last;  // full test split, final weights
  std::vector<std::uint8_t> best_checkpoint;
  std::vector<std::uint8_t> last_checkpoint;
  std::size_t steps = 0;
};

// Trains `model` (adapters already attached) in place; on return the model
// holds the last-epoch weights.
TrainResult train(const RunConfig& cfg, const PreparedData& data, VitModel<float>& model);

// "epoch,loss,oa,aa,kappa" with a header; metric cells empty on epochs without evaluation.
std::string format_epoch_csv(const std::vector<EpochRecord>& epochs);

// Command implementations shared by the CLI and the C API. Each writes its
// artifacts under cfg.output_dir unless an explicit path is given.
struct SynthPaths {
  std::string cube;
  std::string labels;
};
SynthPaths run_synth(const RunConfig& cfg);

struct TrainArtifacts {
  TrainResult result;
  std::string log_path;
  std::string best_path;
  std::string last_path;
  std::string report_path;
};
TrainArtifacts run_train(const RunConfig& cfg);

// Accepts an adapter checkpoint or a full-model checkpoint.
MetricsSummary run_eval(const RunConfig& cfg, const std::string& checkpoint);

// Loads adapters onto the configured base, folds them in and writes a full-model checkpoint.
void run_fuse(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_path);

struct CountReport {
  Method method = Method::LoRA;
  std::size_t n_classes = 0;
  std::size_t trainable = 0;
  std::size_t total = 0;
  std::uint64_t storage_bytes = 0;

  double trainable_millions() const { return static_cast<double>(trainable) * 1e-6; }
  std::string format() const;
};
// n_classes == 0 derives K from the configured data.
CountReport run_count(const RunConfig& cfg, std::size_t n_classes = 0);

struct SweepRow {
  double lambda = 1.0;
  MetricsSummary metrics;
};
// One training run per distinct λ (sorted ascending); writes sweep.csv.
std::vector<SweepRow> run_sweep_lambda(const RunConfig& cfg, std::vector<double> lambdas);
std::string format_sweep_csv(const std::vector<SweepRow>& rows);

// Hue 360°·(i−1)/K at full saturation and value; class 0 is black.
std::array<std::uint8_t, 3> class_color(std::size_t label, std::size_t classes);
// Predicted classes over every labeled pixel as a binary PPM (P6).
void run_map(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_path);

}  // namespace peft
