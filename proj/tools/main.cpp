// gbgnn command line: train, theory, curves.
//
// Exit codes: 0 ok, 2 configuration or usage error, 3 data error,
// 4 numeric failure.

#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "experiment.hpp"
#include "gbgnn/error.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(gbgnn::ErrorKind k) {
  switch (k) {
    case gbgnn::ErrorKind::kConfig:
    case gbgnn::ErrorKind::kInvalidArgument: return kExitConfig;
    case gbgnn::ErrorKind::kData: return kExitData;
    case gbgnn::ErrorKind::kNumeric: return kExitNumeric;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  namespace ex = gbgnn::experiment;
  namespace fs = std::filesystem;

  CLI::App app{"Gradient-boosted graph neural networks: training, bounds and curves"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train every seed of an experiment config");
  std::string config_path;
  std::string out_dir;
  unsigned jobs = 1;
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  train->add_option("--jobs", jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);

  auto* theory = app.add_subcommand("theory", "Bound breakdown and spectral trajectory of a model");
  std::string model_path;
  std::string data_dir;
  std::string theory_out;
  gbgnn::TheoryOptions topts;
  theory->add_option("--model", model_path, "model.json or its directory")->required();
  theory->add_option("--data", data_dir, "Dataset directory (converted layout)")->required();
  theory->add_option("--out", theory_out, "Output directory (default: the run directory)");
  theory->add_option("--c0", topts.c0, "Universal constant c0");
  theory->add_option("--delta-prime", topts.delta_prime, "Confidence parameter delta'");
  theory->add_option("--delta", topts.delta, "Margin of the training error");
  theory->add_option("--t-max", topts.spectral_t_max, "Last propagation depth of the spectral trajectory");
  theory->add_option("--eigen-cap", topts.eigen_cap, "Largest N for the dense eigendecomposition");

  auto* curves = app.add_subcommand("curves", "Merge trace CSVs into long-format plot data");
  std::string pattern;
  std::string curves_out;
  curves->add_option("--glob", pattern, "Glob matching trace.csv files")->required();
  curves->add_option("--out", curves_out, "Output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      ex::ExperimentConfig cfg = ex::load_config(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (cfg.output_dir.empty()) throw gbgnn::config_error("config.output_dir: required when --out is absent");
      const ex::TrainSummary s = ex::cmd_train(cfg, cfg.output_dir, fs::path(config_path), jobs);
      for (const auto& r : s.runs) {
        std::printf("seed %llu: train %.4f test %.4f t*=%zu%s\n", static_cast<unsigned long long>(r.seed),
                    r.train_acc, r.test_acc, r.t_star, r.flagged ? " (flagged)" : "");
      }
      std::printf("test accuracy %.2f +- %.2f over %zu seeds\n", 100.0 * s.test_acc.mean,
                  100.0 * s.test_acc.std, s.runs.size());
    } else if (*theory) {
      std::optional<fs::path> out;
      if (!theory_out.empty()) out = theory_out;
      const ex::TheoryFiles f = ex::cmd_theory(model_path, data_dir, topts, out);
      std::printf("wrote %s\n", f.json.string().c_str());
      if (f.spectral_csv) std::printf("wrote %s\n", f.spectral_csv->string().c_str());
      for (const auto& note : f.report.notes) std::printf("note: %s\n", note.c_str());
    } else if (*curves) {
      const auto files = ex::expand_glob(pattern);
      if (curves_out.empty()) {
        ex::cmd_curves(files, std::cout);
      } else {
        std::ofstream o(curves_out);
        if (!o) throw gbgnn::data_error("cannot write " + curves_out);
        ex::cmd_curves(files, o);
      }
    }
  } catch (const gbgnn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed JSON input: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
