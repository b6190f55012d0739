#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "gbgnn/graph.hpp"
#include "gbgnn/types.hpp"

namespace gbgnn {

/// Transductive partition of the node set. Q and S are derived on demand.
class Split {
 public:
  Split() = default;
  /// Throws unless the three sets are pairwise disjoint, in range, train and
  /// test nonempty.
  Split(NodeIds train, NodeIds validation, NodeIds test, NodeId n_nodes);

  const NodeIds& train() const noexcept { return train_; }
  const NodeIds& validation() const noexcept { return validation_; }
  const NodeIds& test() const noexcept { return test_; }

  std::size_t m() const noexcept { return train_.size(); }
  std::size_t u() const noexcept { return test_.size(); }

  /// 1/M + 1/U.
  double q() const;
  /// 4(M+U)(M∧U) / ((2(M+U)-1)(2(M∧U)-1)).
  double s() const;

 private:
  NodeIds train_;
  NodeIds validation_;
  NodeIds test_;
};

double q_constant(std::size_t m, std::size_t u);
double s_constant(std::size_t m, std::size_t u);

struct NodeDataset {
  std::string name;
  SparseGraph graph;
  Matrix features;  // N x C
  Labels labels;    // N entries in [0, K)
  int num_classes = 0;
  Split split;

  NodeId n_nodes() const noexcept { return graph.n_nodes(); }
};

/// Checks the dataset invariants; throws a data error describing the first
/// violation.
void validate(const NodeDataset& d);

/// Scales each row to unit L1 norm; all-zero rows are left untouched.
Matrix row_normalize(const Matrix& x);

struct PlanetoidOptions {
  bool row_normalize = true;
};

/// Loads the converted Planetoid layout:
///   features.tsv  N rows of C tab-separated decimals
///   labels.tsv    N class ids
///   edges.txt     edge list
///   split.json    {"train": [...], "val": [...], "test": [...]}
///   meta.json     {"n": N, "c": C, "k": K} (optional "edge_lines")
/// Counts are validated against meta.json and, for the known citation
/// datasets, against a built-in manifest.
NodeDataset load_planetoid(const std::filesystem::path& dir, const std::string& name,
                           const PlanetoidOptions& options = {});

/// Writes the layout read by load_planetoid. Features use round-trip precision.
void save_dataset(const NodeDataset& d, const std::filesystem::path& dir);

/// Expected counts for a named dataset, if known.
struct DatasetManifest {
  std::vector<NodeId> accepted_nodes;
  int num_classes = 0;
};
std::optional<DatasetManifest> known_manifest(const std::string& name);

/// Uniform m-subset of [0, n) as train, the rest as test, no validation.
Split random_partition(NodeId n, std::size_t m, std::uint64_t seed);

/// N x K indicator matrix.
Matrix one_hot(const Labels& labels, int k);

struct TwoBlockOptions {
  double noise_sigma = 0.1;
  /// Train fraction of a random partition attached to the dataset.
  double train_fraction = 0.5;
};

/// Two equal communities (nodes [0, n/2) and [n/2, n)); label = community;
/// features = community indicator (2 columns) plus Gaussian noise.
NodeDataset synthesize_two_block(NodeId n, double p_in, double p_out,
                                 std::uint64_t seed, const TwoBlockOptions& options = {});

}  // namespace gbgnn
