#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gbgnn/boost.hpp"
#include "gbgnn/theory.hpp"

namespace gbgnn::experiment {

struct DatasetRef {
  std::string kind = "planetoid";  // planetoid | two_block
  std::string name;                // planetoid: cora | citeseer | pubmed | other
  std::string path;                // planetoid: directory holding the converted files
  bool row_normalize = true;
  // two_block
  NodeId n = 100;
  double p_in = 0.1;
  double p_out = 0.01;
  std::uint64_t seed = 0;
  double noise_sigma = 0.1;
  double train_fraction = 0.5;
};

struct FineTuneSettings {
  bool enabled = false;
  TrainConfig train;
};

/// Variants: adj (fixed propagation), kta, input_injection, samme_r (fixed
/// propagation with SAMME.R). Unknown keys are rejected.
struct ExperimentConfig {
  DatasetRef dataset;
  std::string variant = "adj";
  int hidden_layers = 1;
  Index hidden_width = 64;
  Activation activation = Activation::kRelu;
  bool bias_every_layer = true;
  PropagationKind propagation = PropagationKind::kAugmented;
  BoostMode mode = BoostMode::kSamme;
  int T = 100;
  FunctionalConfig functional;  // used when mode = functional (T is taken from above)
  TrainConfig train;
  AlignmentConfig alignment;
  int kta_degree = kDefaultKtaDegree;
  double rho = 0.5;
  FineTuneSettings fine_tune;
  std::vector<std::uint64_t> seeds{0};
  double clip = kDefaultClip;
  std::string output_dir;

  ModelSpec model_spec(std::uint64_t seed) const;
};

/// Throws a config error naming the offending field ("config.train.epochs: ...").
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
/// Relative dataset paths are resolved against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& file);

NodeDataset load_dataset(const DatasetRef& ref);

/// Git blob hash: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(const std::string& bytes);
std::string git_blob_sha1_file(const std::filesystem::path& file);

struct SeedResult {
  std::uint64_t seed = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;  // NaN without validation nodes
  double test_acc = 0.0;
  std::size_t t_star = 0;
  std::size_t stages = 0;
  bool flagged = false;
  std::string flag_reason;
  std::optional<FineTuneResult> fine_tune;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};
MeanStd mean_std(const std::vector<double>& v);

struct TrainSummary {
  std::vector<SeedResult> runs;
  MeanStd train_acc;
  MeanStd val_acc;
  MeanStd test_acc;
};

/// One seed: boosting, optional fine-tuning. No files are written.
struct SeedRun {
  BoostResult boost;
  SeedResult result;
};
SeedRun run_seed(const ExperimentConfig& cfg, const NodeDataset& data, std::uint64_t seed);

/// Runs every seed and writes out/config.json, out/run_info.json,
/// out/seed_<s>/{model/, trace.csv, summary.json}, out/summary.json and, for
/// generated datasets, out/dataset/. `jobs` seeds run concurrently.
TrainSummary cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out,
                       const std::optional<std::filesystem::path>& config_file = std::nullopt,
                       unsigned jobs = 1);

struct TheoryFiles {
  TheoryReport report;
  std::filesystem::path json;
  std::optional<std::filesystem::path> spectral_csv;
};

/// `model` is a model.json or a directory containing one; a trace.csv next
/// to the model directory is used when present. Writes theory.json and
/// spectral.csv into `out` (default: the run directory).
TheoryFiles cmd_theory(const std::filesystem::path& model, const std::filesystem::path& data_dir,
                       const TheoryOptions& opts,
                       const std::optional<std::filesystem::path>& out = std::nullopt);

/// Long format (seed, t, metric, value) with per-(t, metric) mean and std
/// columns added when there are several traces. Throws a data error on
/// schema mismatch or an empty match.
void cmd_curves(const std::vector<std::filesystem::path>& traces, std::ostream& out);
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

}  // namespace gbgnn::experiment
