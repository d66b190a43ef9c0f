#include "core/optimizer.hpp"

#include <cmath>

#include "core/text_util.hpp"

namespace peft {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

template <typename T>
std::vector<ParamGroup<T>> build_groups(VitModel<T>& model, const AdapterSpec& spec,
                                        const OptimizerConfig& cfg) {
  cfg.validate();
  if (!(spec.lambda >= 1.0))
    throw ConfigError("lambda must be >= 1 (got " + format_double(spec.lambda) + ")");
  std::vector<Param<T>*> trainable;
  for (Param<T>* p : model.all_params())
    if (p->trainable) trainable.push_back(p);

  if (!is_plus_variant(spec.method))
    return {ParamGroup<T>{"all", std::move(trainable), cfg.lr, cfg.weight_decay}};

  ParamGroup<T> ga{"A", {}, cfg.lr, cfg.weight_decay};
  ParamGroup<T> gb{"B", {}, spec.lambda * cfg.lr, cfg.weight_decay};
  ParamGroup<T> gh{"head", {}, cfg.lr, cfg.weight_decay};
  for (Param<T>* p : trainable) {
    if (p->name.ends_with(".B")) gb.params.push_back(p);
    else if (p->name.ends_with(".A")) ga.params.push_back(p);
    else gh.params.push_back(p);
  }
  return {std::move(ga), std::move(gb), std::move(gh)};
}

template <typename T>
AdamW<T>::AdamW(std::vector<ParamGroup<T>> groups, const OptimizerConfig& cfg)
    : groups_(std::move(groups)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& g : groups_)
    for (const Param<T>* p : g.params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
}

template <typename T>
double AdamW<T>::current_lr_factor() const {
  if (cfg_.warmup_steps == 0) return 1.0;
  const double s = static_cast<double>(step_ + 1);
  return std::min(1.0, s / static_cast<double>(cfg_.warmup_steps));
}

template <typename T>
void AdamW<T>::step() {
  for (const auto& g : groups_)
    for (const Param<T>* p : g.params)
      if (!all_finite(p->grad)) throw NumericalError("non-finite gradient in parameter '" + p->name + "'");

  const double factor = current_lr_factor();
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  std::size_t idx = 0;
  for (auto& g : groups_) {
    const double lr = g.lr * factor;
    for (Param<T>* p : g.params) {
      auto& m = m_[idx];
      auto& v = v_[idx];
      ++idx;
      T* theta = p->value.raw();
      const T* grad = p->grad.raw();
      for (std::size_t i = 0, n = p->size(); i < n; ++i) {
        const double gi = grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double th = theta[i];
        theta[i] = static_cast<T>(th - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + g.weight_decay * th));
      }
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& g : groups_)
    for (Param<T>* p : g.params) p->zero_grad();
}

template std::vector<ParamGroup<float>> build_groups(VitModel<float>&, const AdapterSpec&,
                                                     const OptimizerConfig&);
template std::vector<ParamGroup<double>> build_groups(VitModel<double>&, const AdapterSpec&,
                                                      const OptimizerConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace peft
