#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "core/adapters.hpp"
#include "core/checkpoint.hpp"
#include "core/errors.hpp"
#include "core/log.hpp"
#include "core/optimizer.hpp"
#include "core/text_util.hpp"
#include "core/trainer.hpp"

using namespace peft;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("peft_trainer_" + name);
  fs::remove_all(p);
  return p.string();
}

RunConfig small_run(const std::string& out, const std::string& method = "lora") {
  RunConfig c;
  c.seed = 3;
  c.output_dir = out;
  for (auto [k, v] : {std::pair{"data.synth_height", "20"}, {"data.synth_width", "20"},
                      {"data.synth_bands", "16"}, {"data.synth_classes", "3"}, {"data.patch_size", "5"},
                      {"split.train_per_class", "6"}, {"model.preset", "custom"}, {"model.embed_dim", "16"},
                      {"model.depth", "1"}, {"model.heads", "2"}, {"model.mlp_ratio", "2"},
                      {"train.epochs", "2"}, {"train.batch_size", "6"}, {"optim.lr", "0.005"}})
    c.set(k, v);
  c.set("adapter.method", method);
  return c;
}

std::string slurp(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

TEST_CASE("prepare_data: split, patches and statistics") {
  const RunConfig cfg = small_run(scratch("prep"));
  const PreparedData d = prepare_data(cfg);
  CHECK(d.class_count() == 3);
  CHECK(d.train_x.size() == 18);
  CHECK(d.train_y.size() == 18);
  CHECK(d.train_x[0].shape() == Shape{32, 32, 12});
  CHECK(d.test_coords.size() == d.test_y.size());
  CHECK(d.test_coords.size() + 18 == 400);
  CHECK(d.explained_variance_ratio.size() == 12);
  double mean = 0.0;
  for (const auto& t : d.train_x)
    for (float v : t.data()) mean += v;
  mean /= static_cast<double>(18 * 32 * 32 * 12);
  CHECK(std::fabs(mean) <= 1e-3);
  // Same seed, same data.
  const PreparedData again = prepare_data(cfg);
  CHECK(again.train_x == d.train_x);
  CHECK(again.split.test == d.split.test);
}

TEST_CASE("evaluate: result does not depend on the thread count") {
  RunConfig cfg = small_run(scratch("threads"));
  const PreparedData d = prepare_data(cfg);
  const VitModel<float> m = build_model(cfg, d.class_count());
  CHECK(evaluate(m, d, 1).counts() == evaluate(m, d, 3).counts());
  CHECK(evaluate(m, d, 2, 50).total() == 50);
}

TEST_CASE("train: identical runs give identical artifacts") {
  const std::string a = scratch("det_a"), b = scratch("det_b");
  const auto ra = run_train(small_run(a, "krona"));
  const auto rb = run_train(small_run(b, "krona"));
  for (const char* f : {"train_log.csv", "best.peft", "last.peft", "metrics_best.kv", "metrics_last.kv"})
    CHECK(slurp(a + "/" + f) == slurp(b + "/" + f));
  CHECK(ra.result.steps == 2 * 3);
  CHECK(ra.result.epochs.size() == 2);
  for (const auto& e : ra.result.epochs) CHECK(std::isfinite(e.loss));
  const std::string log = slurp(a + "/train_log.csv");
  CHECK(log.starts_with("epoch,loss,oa,aa,kappa\n"));
  CHECK(slurp(a + "/report.txt").find("selected by test OA") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train: lambda = 1 plus variants log exactly like the plain methods") {
  for (auto [plain, plus] : {std::pair{"lora", "lora+"}, {"krona", "krona+"}}) {
    const RunConfig c1 = small_run(scratch("l1"), plain), c2 = small_run(scratch("l2"), plus);
    const PreparedData d = prepare_data(c1);
    VitModel<float> m1 = build_model(c1, 3), m2 = build_model(c2, 3);
    const auto r1 = train(c1, d, m1), r2 = train(c2, d, m2);
    CHECK(format_epoch_csv(r1.epochs) == format_epoch_csv(r2.epochs));
    CHECK(m1.forward(d.train_x[0]) == m2.forward(d.train_x[0]));
  }
}

TEST_CASE("train: every trainable parameter receives gradient within one epoch") {
  for (const char* method : {"lp", "bitfit", "lora", "krona", "lokr", "fft"}) {
    CAPTURE(method);
    RunConfig cfg = small_run(scratch("cover"), method);
    cfg.train.augment = false;
    const PreparedData d = prepare_data(cfg);
    VitModel<float> m = build_model(cfg, d.class_count());
    AdamW<float> opt(build_groups(m, *m.adapter_spec, cfg.optim), cfg.optim);
    std::set<std::string> touched;
    for (std::size_t start = 0; start < d.train_x.size(); start += cfg.train.batch_size) {
      for (std::size_t i = start; i < std::min(d.train_x.size(), start + cfg.train.batch_size); ++i) {
        VitModel<float>::Cache c;
        const Tensor y = m.forward(d.train_x[i], &c);
        m.backward(c, cross_entropy(y, d.train_y[i]).dlogits);
      }
      for (const Param<float>* p : m.all_params())
        if (p->trainable && max_abs(p->grad) > 0.0f) touched.insert(p->name);
      opt.step();
      opt.zero_grad();
    }
    std::size_t trainable_scalars = 0;
    for (const Param<float>* p : m.all_params())
      if (p->trainable) {
        CAPTURE(p->name);
        // Key biases shift every score of a row equally; softmax cancels them.
        if (!p->name.ends_with(".attn.k.bias")) CHECK(touched.count(p->name) == 1);
        trainable_scalars += p->size();
      }
    CHECK(trainable_scalars == run_count(cfg, 3).trainable);
  }
}

TEST_CASE("train: non-finite loss aborts with epoch and batch") {
  RunConfig cfg = small_run(scratch("nan"));
  cfg.train.augment = false;
  PreparedData d = prepare_data(cfg);
  d.train_x[4][0] = std::numeric_limits<float>::quiet_NaN();
  VitModel<float> m = build_model(cfg, 3);
  try {
    train(cfg, d, m);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("eval, fuse and map on trained artifacts") {
  const std::string out = scratch("eval");
  RunConfig cfg = small_run(out, "lokr");
  const auto art = run_train(cfg);
  const MetricsSummary last = run_eval(cfg, art.last_path);
  CHECK(last.oa == art.result.last.oa);
  CHECK(last.kappa == art.result.last.kappa);
  CHECK(run_eval(cfg, art.best_path).oa == art.result.best.oa);

  run_fuse(cfg, art.last_path, out + "/fused.peft");
  CHECK(std::fabs(run_eval(cfg, out + "/fused.peft").oa - last.oa) <= 1e-6);
  CHECK_THROWS_AS(run_fuse(cfg, out + "/fused.peft", out + "/again.peft"), DataError);

  run_map(cfg, art.last_path, out + "/map.ppm");
  const std::string ppm = slurp(out + "/map.ppm");
  const std::string header = "P6\n20 20\n255\n";
  REQUIRE(ppm.starts_with(header));
  CHECK(ppm.size() == header.size() + 3 * 20 * 20);

  RunConfig other = cfg;
  other.set("adapter.method", "lora");
  VitModel<float> wrong = build_model(other, 3);
  CHECK_THROWS_AS(load_adapters(art.last_path, wrong), DataError);
  fs::remove_all(out);
}

TEST_CASE("sweep: sorted, deduplicated, and lambda = 1 matches the baseline") {
  const std::string out = scratch("sweep");
  RunConfig cfg = small_run(out, "lora+");
  cfg.train.epochs = 1;
  int warnings = 0;
  set_log_sink([&](LogLevel level, const std::string&) { warnings += level == LogLevel::Warning; });
  const auto rows = run_sweep_lambda(cfg, {1.5, 1.0, 1.5});
  set_log_sink({});
  CHECK(warnings == 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].lambda == 1.0);
  CHECK(rows[1].lambda == 1.5);
  CHECK(slurp(out + "/sweep.csv").starts_with("lambda,oa,aa,kappa\n1,"));

  RunConfig base = small_run(scratch("sweep_base"), "lora");
  base.train.epochs = 1;
  const PreparedData d = prepare_data(base);
  VitModel<float> m = build_model(base, 3);
  const auto r = train(base, d, m);
  CHECK(rows[0].metrics.oa == r.last.oa);
  CHECK(slurp(out + "/lambda_1/train_log.csv") == format_epoch_csv(r.epochs));

  CHECK_THROWS_AS(run_sweep_lambda(cfg, {}), ConfigError);
  CHECK_THROWS_AS(run_sweep_lambda(cfg, {0.5}), ConfigError);
  CHECK_THROWS_AS(run_sweep_lambda(small_run(out, "lora"), {1.0}), ConfigError);
  fs::remove_all(out);
}

TEST_CASE("synth and count commands") {
  const std::string out = scratch("synth");
  RunConfig cfg;
  cfg.output_dir = out;
  const SynthPaths p1 = run_synth(cfg);
  const auto first = read_file_bytes(p1.cube);
  const SynthPaths p2 = run_synth(cfg);
  CHECK(read_file_bytes(p2.cube) == first);
  CHECK(fs::exists(p1.labels));

  RunConfig narrow = small_run(scratch("narrow"));
  narrow.data.synth_bands = 8;
  CHECK_THROWS_AS(run_train(narrow), DataError);

  RunConfig base;
  base.model.preset = "base";
  base.adapter.method = Method::KronA;
  const CountReport kr = run_count(base, 9);
  CHECK(format_fixed(kr.trainable_millions(), 3) == "0.044");
  base.adapter.method = Method::Full;
  const CountReport full = run_count(base, 9);
  CHECK(full.trainable == full.total);
  CHECK(full.total == 85226505);
  CHECK(kr.format().find("trainable_params_m = 0.044") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("map palette") {
  CHECK(class_color(0, 5) == std::array<std::uint8_t, 3>{0, 0, 0});
  CHECK(class_color(1, 3) == std::array<std::uint8_t, 3>{255, 0, 0});
  CHECK(class_color(2, 3) == std::array<std::uint8_t, 3>{0, 255, 0});
  CHECK(class_color(3, 3) == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK(class_color(2, 4) == std::array<std::uint8_t, 3>{128, 255, 0});
}
