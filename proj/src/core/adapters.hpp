#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/adapter_spec.hpp"
#include "core/checkpoint.hpp"
#include "core/vit.hpp"

namespace peft {

// ΔW = (α/r)·B·A with A ∈ R^{r×q}, B ∈ R^{p×r}. Evaluated factor-first.
template <typename T>
class LoraAdapter final : public DeltaAdapter<T> {
 public:
  LoraAdapter(std::size_t p, std::size_t q, std::size_t rank, double scale, const std::string& prefix);

  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) override;
  BasicTensor<T> delta_weight() const override;
  std::vector<Param<T>*> params() override { return {&a, &b}; }
  std::vector<const Param<T>*> params() const override { return {&a, &b}; }

  Param<T> a, b;
  T scale;
};

// ΔW = s·(A ⊗ B) with A ∈ R^{r1×r2}, B ∈ R^{(p/r1)×(q/r2)}.
template <typename T>
class KronaAdapter final : public DeltaAdapter<T> {
 public:
  KronaAdapter(std::size_t p, std::size_t q, std::size_t r1, std::size_t r2, double scale,
               const std::string& prefix);

  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) override;
  BasicTensor<T> delta_weight() const override;
  std::vector<Param<T>*> params() override { return {&a, &b}; }
  std::vector<const Param<T>*> params() const override { return {&a, &b}; }

  Param<T> a, b;
  T scale;
};

// ΔW = γ·(C ⊗ (B·A)) with C ∈ R^{u_p×u_q}, A ∈ R^{r×v_q}, B ∈ R^{v_p×r}.
template <typename T>
class LokrAdapter final : public DeltaAdapter<T> {
 public:
  LokrAdapter(std::size_t p, std::size_t q, std::size_t factor, std::size_t rank, double gamma,
              const std::string& prefix);

  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) override;
  BasicTensor<T> delta_weight() const override;
  std::vector<Param<T>*> params() override { return {&c, &a, &b}; }
  std::vector<const Param<T>*> params() const override { return {&c, &a, &b}; }

  Param<T> c, a, b;
  T gamma;
};

// Batched Kronecker application to the rows of x: row t of the result is
// scale·(left ⊗ right)·x_t. Never forms left ⊗ right.
template <typename T>
BasicTensor<T> kron_rows(const BasicTensor<T>& left, const BasicTensor<T>& right,
                         const BasicTensor<T>& x, T scale);
// Backward of kron_rows. Accumulates into dleft/dright when non-null; returns dx.
template <typename T>
BasicTensor<T> kron_rows_backward(const BasicTensor<T>& left, const BasicTensor<T>& right,
                                  const BasicTensor<T>& x, const BasicTensor<T>& dy, T scale,
                                  BasicTensor<T>* dleft, BasicTensor<T>* dright);

// Attaches the method's adapters to every block's Q and V projections and
// configures trainability: the head is always trainable; BitFit adds the Q/V
// biases; FFT trains everything; all other base weights are frozen. The
// zero-initialized factor (B) guarantees ΔW == 0 right after attach.
template <typename T>
void attach(VitModel<T>& model, const AdapterSpec& spec, Rng& rng);

template <typename T>
std::size_t count_trainable_params(const VitModel<T>& model);

// Closed-form counts from the configuration alone (no model is built).
// They agree with count_trainable_params / count_all_params on an attached model.
std::size_t closed_form_total_params(const ModelConfig& cfg);
std::size_t closed_form_trainable_params(const ModelConfig& cfg, const AdapterSpec& spec);

// Tensors persisted by an adapter checkpoint, keyed by their on-disk names.
template <typename T>
std::vector<std::pair<std::string, const Param<T>*>> stored_tensors(const VitModel<T>& model,
                                                                    bool include_head = true);
template <typename T>
std::vector<std::pair<std::string, Param<T>*>> stored_tensors(VitModel<T>& model,
                                                              bool include_head = true);

// Four bytes per stored scalar.
template <typename T>
std::uint64_t adapter_storage_bytes(const VitModel<T>& model, bool include_head = true);

inline double to_decimal_mb(std::uint64_t bytes) { return static_cast<double>(bytes) / 1e6; }
inline double to_mib(std::uint64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0); }

// Folds every ΔW into its base weight and removes the hooks.
template <typename T>
void fuse(VitModel<T>& model);

void save_adapters(const VitModel<float>& model, const std::string& path);
CheckpointFile adapter_checkpoint(const VitModel<float>& model);
// Attaches (if needed) using the spec stored in the file and loads the
// factors. Throws DataError on any method or shape mismatch.
void load_adapters(const std::string& path, VitModel<float>& model);
void apply_adapter_checkpoint(const CheckpointFile& file, VitModel<float>& model);

// Full-model checkpoints carry the reserved method id and the model config.
void save_full_model(const VitModel<float>& model, const std::string& path);
CheckpointFile full_model_checkpoint(const VitModel<float>& model);
VitModel<float> load_full_model(const std::string& path);
// Copies base weights from a full-model checkpoint into an existing model,
// ignoring the head when its class count differs.
void load_base_weights(const std::string& path, VitModel<float>& model);

}  // namespace peft
