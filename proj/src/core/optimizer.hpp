#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/adapter_spec.hpp"
#include "core/vit.hpp"

namespace peft {

struct OptimizerConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  // Linear warmup over this many steps; 0 disables it.
  std::size_t warmup_steps = 0;

  void validate() const;
};

template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Param<T>*> params;
  double lr = 0.0;
  double weight_decay = 0.0;
};

// LoRA+ / KronA+: {A factors} at η, {B factors} at λη, {head} at η.
// Every other method: a single group at η. Frozen parameters are left out.
template <typename T>
std::vector<ParamGroup<T>> build_groups(VitModel<T>& model, const AdapterSpec& spec,
                                        const OptimizerConfig& cfg);

// AdamW with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<ParamGroup<T>> groups, const OptimizerConfig& cfg);

  // Applies one update from the accumulated gradients. Throws NumericalError
  // naming the parameter if any gradient is not finite.
  void step();
  void zero_grad();

  std::size_t step_count() const noexcept { return step_; }
  const std::vector<ParamGroup<T>>& groups() const noexcept { return groups_; }
  double current_lr_factor() const;

 private:
  std::vector<ParamGroup<T>> groups_;
  OptimizerConfig cfg_;
  // Moments per parameter, in group order.
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace peft
