#include <doctest.h>

#include <cmath>
#include <limits>

#include "core/adapters.hpp"
#include "core/errors.hpp"
#include "core/optimizer.hpp"
#include "test_util.hpp"

using namespace peft;
using namespace peft::testing;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.input_hw = 8;
  c.input_bands = 3;
  c.token_hw = 4;
  c.token_depth = 3;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.n_classes = 3;
  return c;
}

Param<double> scalar_param(const std::string& name, double value, double grad) {
  Param<double> p(name, Tensor64::vector({value}));
  p.grad[0] = grad;
  return p;
}

}  // namespace

TEST_CASE("adamw: first step moves by lr·sign(g)") {
  Param<double> p = scalar_param("w", 1.0, 0.3);
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW<double> opt({ParamGroup<double>{"all", {&p}, cfg.lr, 0.0}}, cfg);
  opt.step();
  // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: identical states give updates in ratio lambda") {
  for (double lambda : {1.15, 1.5, 8.0}) {
    CAPTURE(lambda);
    Param<double> a = scalar_param("x.A", 0.0, 0.37);
    Param<double> b = scalar_param("x.B", 0.0, 0.37);
    OptimizerConfig cfg;
    cfg.lr = 1e-3;
    AdamW<double> opt({ParamGroup<double>{"A", {&a}, cfg.lr, cfg.weight_decay},
                       ParamGroup<double>{"B", {&b}, lambda * cfg.lr, cfg.weight_decay}},
                      cfg);
    opt.step();
    const double ua = -a.value[0], ub = -b.value[0];
    REQUIRE(ua > 0.0);
    CHECK(std::fabs(ub / ua - lambda) <= 4 * std::numeric_limits<double>::epsilon() * lambda);
  }
}

TEST_CASE("build_groups: plus variants split A, B and head") {
  for (Method m : {Method::LoRAPlus, Method::KronAPlus}) {
    VitModel<double> model(micro_config());
    Rng rng(0);
    AdapterSpec spec;
    spec.method = m;
    spec.rank = 2;
    spec.lambda = 8.0;
    attach(model, spec, rng);
    OptimizerConfig cfg;
    cfg.lr = 2e-3;
    const auto groups = build_groups(model, spec, cfg);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].lr == 2e-3);
    CHECK(groups[1].lr == 8.0 * 2e-3);
    CHECK(groups[2].lr == 2e-3);
    for (const auto* p : groups[0].params) CHECK(p->name.ends_with(".A"));
    for (const auto* p : groups[1].params) CHECK(p->name.ends_with(".B"));
    REQUIRE(groups[2].params.size() == 2);
    CHECK(groups[2].params[0]->name.starts_with("head."));
    CHECK(groups[0].params.size() == 2);
    CHECK(groups[1].params.size() == 2);
  }
  VitModel<double> model(micro_config());
  Rng rng(0);
  AdapterSpec spec;
  spec.method = Method::LoRA;
  spec.lambda = 8.0;
  attach(model, spec, rng);
  const auto groups = build_groups(model, spec, OptimizerConfig{});
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].params.size() == 6);
}

TEST_CASE("build_groups: lambda below one is rejected") {
  VitModel<double> model(micro_config());
  AdapterSpec spec;
  spec.method = Method::LoRAPlus;
  spec.lambda = 0.5;
  CHECK_THROWS_AS(build_groups(model, spec, OptimizerConfig{}), ConfigError);
}

TEST_CASE("lambda = 1: plus variant updates equal the plain method") {
  auto run = [](Method m) {
    VitModel<double> model(micro_config());
    Rng rng(3);
    model.initialize(rng, 0.3);
    AdapterSpec spec;
    spec.method = m;
    spec.rank = 2;
    attach(model, spec, rng);
    AdamW<double> opt(build_groups(model, spec, OptimizerConfig{}), OptimizerConfig{});
    std::mt19937_64 r(9);
    for (int step = 0; step < 3; ++step) {
      opt.zero_grad();
      typename VitModel<double>::Cache cache;
      const Tensor64 x = random_tensor<double>({8, 8, 3}, r);
      model.forward(x, &cache);
      model.backward(cache, cross_entropy(model.forward(x), step % 3).dlogits);
      opt.step();
    }
    std::vector<Tensor64> values;
    for (const auto* p : model.all_params()) values.push_back(p->value);
    return values;
  };
  CHECK(run(Method::LoRA) == run(Method::LoRAPlus));
  CHECK(run(Method::KronA) == run(Method::KronAPlus));
}

TEST_CASE("adamw: weight decay is decoupled from the gradient") {
  Param<double> p = scalar_param("w", 2.0, 0.0);
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.05;
  AdamW<double> opt({ParamGroup<double>{"all", {&p}, cfg.lr, cfg.weight_decay}}, cfg);
  opt.step();
  // Zero gradient: only the decay term acts, θ ← θ − lr·wd·θ.
  CHECK(p.value[0] == doctest::Approx(2.0 - 0.1 * 0.05 * 2.0).epsilon(1e-15));
}

TEST_CASE("adamw: warmup scales the learning rate linearly") {
  Param<double> p = scalar_param("w", 0.0, 1.0);
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 4;
  AdamW<double> opt({ParamGroup<double>{"all", {&p}, cfg.lr, 0.0}}, cfg);
  CHECK(opt.current_lr_factor() == doctest::Approx(0.25));
  opt.step();
  CHECK(p.value[0] == doctest::Approx(-0.025).epsilon(1e-6));
}

TEST_CASE("adamw: non-finite gradients raise a numerical error") {
  Param<double> p = scalar_param("layer0.q.A", 1.0, std::numeric_limits<double>::quiet_NaN());
  AdamW<double> opt({ParamGroup<double>{"all", {&p}, 1e-3, 0.0}}, OptimizerConfig{});
  CHECK_THROWS_AS(opt.step(), NumericalError);
  CHECK(p.value[0] == 1.0);
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.weight_decay = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
