// Command-line front end. Talks to the toolkit only through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "peft/peft.h"

namespace {

struct Globals {
  std::string config;
  std::string seed;
  std::string out;
  std::string threads;
  std::vector<std::string> sets;
};

struct ConfigHandle {
  peft_config* ptr = nullptr;
  ~ConfigHandle() { peft_config_free(ptr); }
};

int fail(peft_status st, const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, peft_last_error());
  return static_cast<int>(st);
}

#define CHECK(call, what)              \
  do {                                 \
    const peft_status st_ = (call);    \
    if (st_ != PEFT_OK) return fail(st_, what); \
  } while (0)

int load_config(const Globals& g, ConfigHandle& h) {
  if (g.config.empty()) CHECK(peft_config_new(&h.ptr), "config");
  else CHECK(peft_config_load(g.config.c_str(), &h.ptr), "config");
  for (const auto& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects KEY=VALUE, got '%s'\n", kv.c_str());
      return PEFT_ERR_CONFIG;
    }
    CHECK(peft_config_set(h.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "config");
  }
  if (!g.seed.empty()) CHECK(peft_config_set(h.ptr, "seed", g.seed.c_str()), "--seed");
  if (!g.out.empty()) CHECK(peft_config_set(h.ptr, "output.dir", g.out.c_str()), "--out");
  if (!g.threads.empty()) CHECK(peft_config_set(h.ptr, "train.threads", g.threads.c_str()), "--threads");
  return 0;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

void print_metrics(const char* title, const peft_metrics& m) {
  std::cout << title << "OA " << pct(m.oa) << "  AA " << pct(m.aa) << "  Kappa " << pct(m.kappa) << '\n';
}

void print_metrics_kv(const peft_metrics& m) {
  std::printf("oa=%.17g\naa=%.17g\nkappa=%.17g\n", m.oa, m.aa, m.kappa);
}

void log_to_stderr(int level, const char* msg, void*) {
  std::fprintf(stderr, "%s%s\n", level == 1 ? "warning: " : "", msg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-efficient fine-tuning for hyperspectral image classification"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration file");
  app.add_option("--seed", g.seed, "Global seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");
  app.add_option("--threads", g.threads, "Evaluation worker threads");
  app.add_option("--set", g.sets, "Override a config key, e.g. --set train.epochs=20")->take_all();

  auto* synth = app.add_subcommand("synth", "Write a synthetic .hsic/.hsgt pair");
  auto* train = app.add_subcommand("train", "Fine-tune with the configured method");

  std::string checkpoint, output;
  auto* eval = app.add_subcommand("eval", "Evaluate an adapter or full-model checkpoint on the test split");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();

  auto* fuse = app.add_subcommand("fuse", "Fold adapters into the base weights and write a full model");
  fuse->add_option("checkpoint", checkpoint, "Adapter checkpoint")->required();
  fuse->add_option("-o,--output", output, "Output path (default <out>/fused.peft)");

  std::size_t classes = 0;
  auto* count = app.add_subcommand("count-params", "Trainable parameter and storage report");
  count->add_option("--classes", classes, "Class count (default: from the data)");

  std::vector<double> lambdas;
  auto* sweep = app.add_subcommand("sweep-lambda", "Train once per lambda and write sweep.csv");
  sweep->add_option("--lambdas", lambdas, "Lambda values (default: sweep.lambdas)")->delimiter(',');

  auto* map = app.add_subcommand("map", "Render a classification map as binary PPM");
  map->add_option("checkpoint", checkpoint, "Adapter or full-model checkpoint")->required();
  map->add_option("-o,--output", output, "Output path (default <out>/map.ppm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return PEFT_ERR_CONFIG;
  }

  peft_set_log_callback(log_to_stderr, nullptr);
  ConfigHandle cfg;
  if (int rc = load_config(g, cfg)) return rc;

  auto out_dir = [&] {
    std::size_t len = 0;
    peft_config_output_dir(cfg.ptr, nullptr, &len);
    std::string dir(len, '\0');
    peft_config_output_dir(cfg.ptr, dir.data(), &len);
    dir.resize(len - 1);
    return dir;
  };

  if (*synth) {
    CHECK(peft_synth(cfg.ptr), "synth");
    std::cout << "synthetic cube written\n";
  } else if (*train) {
    peft_metrics best{}, last{};
    CHECK(peft_train(cfg.ptr, &best, &last), "train");
    print_metrics("best: ", best);
    print_metrics("last: ", last);
    std::cout << "artifacts in " << out_dir() << '\n';
  } else if (*eval) {
    peft_metrics m{};
    CHECK(peft_eval(cfg.ptr, checkpoint.c_str(), &m), "eval");
    print_metrics("", m);
    print_metrics_kv(m);
  } else if (*fuse) {
    if (output.empty()) output = out_dir() + "/fused.peft";
    CHECK(peft_fuse(cfg.ptr, checkpoint.c_str(), output.c_str()), "fuse");
    std::cout << "fused model written to " << output << '\n';
  } else if (*count) {
    peft_count c{};
    CHECK(peft_count_params(cfg.ptr, classes, &c), "count-params");
    std::printf("trainable_params = %llu\n", static_cast<unsigned long long>(c.trainable));
    std::printf("trainable_params_m = %.3f\n", static_cast<double>(c.trainable) * 1e-6);
    std::printf("total_params = %llu\n", static_cast<unsigned long long>(c.total));
    std::printf("storage_bytes = %llu\n", static_cast<unsigned long long>(c.storage_bytes));
    std::printf("storage_mb = %.4f\n", c.storage_mb);
    std::printf("storage_mib = %.4f\n", c.storage_mib);
  } else if (*sweep) {
    CHECK(peft_sweep_lambda(cfg.ptr, lambdas.data(), lambdas.size()), "sweep-lambda");
    std::cout << "sweep written to " << out_dir() << "/sweep.csv\n";
  } else if (*map) {
    if (output.empty()) output = out_dir() + "/map.ppm";
    CHECK(peft_map(cfg.ptr, checkpoint.c_str(), output.c_str()), "map");
    std::cout << "map written to " << output << '\n';
  }
  return 0;
}
