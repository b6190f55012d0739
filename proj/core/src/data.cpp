#include "gbgnn/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

#include "gbgnn/error.hpp"

namespace gbgnn {

namespace fs = std::filesystem;
using nlohmann::json;

Split::Split(NodeIds train, NodeIds validation, NodeIds test, NodeId n_nodes)
    : train_(std::move(train)), validation_(std::move(validation)), test_(std::move(test)) {
  if (train_.empty()) throw invalid_argument("Split: empty train set");
  if (test_.empty()) throw invalid_argument("Split: empty test set");
  std::vector<char> seen(static_cast<std::size_t>(n_nodes), 0);
  auto mark = [&](const NodeIds& ids, const char* which) {
    for (NodeId id : ids) {
      if (id < 0 || id >= n_nodes) {
        throw invalid_argument(std::string("Split: ") + which + " id " +
                               std::to_string(id) + " outside [0, " +
                               std::to_string(n_nodes) + ")");
      }
      auto& slot = seen[static_cast<std::size_t>(id)];
      if (slot != 0) {
        throw invalid_argument(std::string("Split: node ") + std::to_string(id) +
                               " appears twice (" + which + ")");
      }
      slot = 1;
    }
  };
  mark(train_, "train");
  mark(validation_, "validation");
  mark(test_, "test");
}

double q_constant(std::size_t m, std::size_t u) {
  if (m == 0 || u == 0) throw invalid_argument("Q: M and U must be >= 1");
  return 1.0 / static_cast<double>(m) + 1.0 / static_cast<double>(u);
}

double s_constant(std::size_t m, std::size_t u) {
  if (m == 0 || u == 0) throw invalid_argument("S: M and U must be >= 1");
  const double total = static_cast<double>(m + u);
  const double smaller = static_cast<double>(std::min(m, u));
  return 4.0 * total * smaller / ((2.0 * total - 1.0) * (2.0 * smaller - 1.0));
}

double Split::q() const { return q_constant(m(), u()); }
double Split::s() const { return s_constant(m(), u()); }

void validate(const NodeDataset& d) {
  const NodeId n = d.graph.n_nodes();
  if (d.features.rows() != n) {
    throw data_error("dataset '" + d.name + "': feature rows " +
                     std::to_string(d.features.rows()) + " != N = " + std::to_string(n));
  }
  if (static_cast<NodeId>(d.labels.size()) != n) {
    throw data_error("dataset '" + d.name + "': label count " +
                     std::to_string(d.labels.size()) + " != N = " + std::to_string(n));
  }
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] < 0 || d.labels[i] >= d.num_classes) {
      throw data_error("dataset '" + d.name + "': node " + std::to_string(i) +
                       " has class " + std::to_string(d.labels[i]) + " outside [0, " +
                       std::to_string(d.num_classes) + ")");
    }
  }
  if (!d.features.allFinite()) {
    throw data_error("dataset '" + d.name + "': non-finite feature value");
  }
}

Matrix row_normalize(const Matrix& x) {
  Matrix out = x;
  for (Index r = 0; r < out.rows(); ++r) {
    const double l1 = out.row(r).lpNorm<1>();
    if (l1 > 0.0) out.row(r) /= l1;
  }
  return out;
}

std::optional<DatasetManifest> known_manifest(const std::string& name) {
  // Node counts: the citation table lists CiteSeer with 3312 nodes; the widely
  // distributed preprocessed copy pads it to 3327 (isolated test nodes).
  // Class counts follow the distributed files (Cora 7, CiteSeer 6).
  static const std::map<std::string, DatasetManifest> manifests = {
      {"cora", {{2708}, 7}},
      {"citeseer", {{3312, 3327}, 6}},
      {"pubmed", {{19717}, 3}},
  };
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (auto it = manifests.find(key); it != manifests.end()) return it->second;
  return std::nullopt;
}

namespace {

std::ifstream open_input(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw data_error("missing or unreadable file: " + p.string());
  return in;
}

json read_json(const fs::path& p) {
  auto in = open_input(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw data_error(p.string() + ": " + e.what());
  }
}

Matrix read_features(const fs::path& p, NodeId n, Index c) {
  auto in = open_input(p);
  Matrix x(n, c);
  std::string line;
  NodeId row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= n) {
      throw data_error(p.string() + ": more than " + std::to_string(n) + " rows");
    }
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    Index col = 0;
    while (cur < end) {
      while (cur < end && (*cur == '\t' || *cur == ' ' || *cur == '\r')) ++cur;
      if (cur >= end) break;
      if (col >= c) {
        throw data_error(p.string() + ": row " + std::to_string(row) +
                         " has more than " + std::to_string(c) + " columns");
      }
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(cur, end, value);
      if (ec != std::errc()) {
        throw data_error(p.string() + ": row " + std::to_string(row) + " column " +
                         std::to_string(col) + " is not a number");
      }
      x(row, col++) = value;
      cur = ptr;
    }
    if (col != c) {
      throw data_error(p.string() + ": row " + std::to_string(row) + " has " +
                       std::to_string(col) + " columns, expected " + std::to_string(c));
    }
    ++row;
  }
  if (row != n) {
    throw data_error(p.string() + ": expected " + std::to_string(n) + " rows, found " +
                     std::to_string(row));
  }
  return x;
}

Labels read_labels(const fs::path& p, NodeId n) {
  auto in = open_input(p);
  Labels labels;
  labels.reserve(static_cast<std::size_t>(n));
  long long v = 0;
  while (in >> v) labels.push_back(static_cast<int>(v));
  if (!in.eof()) throw data_error(p.string() + ": non-integer label");
  if (static_cast<NodeId>(labels.size()) != n) {
    throw data_error(p.string() + ": expected " + std::to_string(n) + " labels, found " +
                     std::to_string(labels.size()));
  }
  return labels;
}

NodeIds ids_from_json(const json& j, const char* key, const fs::path& p) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw data_error(p.string() + ": missing integer array '" + key + "'");
  }
  NodeIds ids;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) {
      throw data_error(p.string() + ": '" + key + "' must contain integers");
    }
    ids.push_back(v.get<NodeId>());
  }
  return ids;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

NodeDataset load_planetoid(const fs::path& dir, const std::string& name,
                           const PlanetoidOptions& options) {
  const json meta = read_json(dir / "meta.json");
  for (const char* key : {"n", "c", "k"}) {
    if (!meta.contains(key) || !meta[key].is_number_integer()) {
      throw data_error((dir / "meta.json").string() + ": missing integer '" + key + "'");
    }
  }
  const auto n = meta["n"].get<NodeId>();
  const auto c = meta["c"].get<Index>();
  const int k = meta["k"].get<int>();

  if (const auto manifest = known_manifest(name)) {
    std::vector<std::string> problems;
    const auto& ok = manifest->accepted_nodes;
    if (std::find(ok.begin(), ok.end(), n) == ok.end()) {
      problems.push_back("nodes expected " + std::to_string(ok.front()) + " actual " +
                         std::to_string(n));
    }
    if (manifest->num_classes != k) {
      problems.push_back("classes expected " + std::to_string(manifest->num_classes) +
                         " actual " + std::to_string(k));
    }
    if (!problems.empty()) {
      std::string msg = "dataset '" + name + "' does not match its manifest:";
      for (const auto& p : problems) msg += " " + p + ";";
      throw data_error(msg);
    }
  }

  NodeDataset d;
  d.name = name;
  d.num_classes = k;
  {
    auto in = open_input(dir / "edges.txt");
    std::size_t raw_lines = 0;
    d.graph = read_edge_list(in, n, &raw_lines);
    if (meta.contains("edge_lines")) {
      const auto expected = meta["edge_lines"].get<std::size_t>();
      if (expected != raw_lines) {
        throw data_error("dataset '" + name + "': edge lines expected " +
                         std::to_string(expected) + " actual " + std::to_string(raw_lines));
      }
    }
  }
  d.features = read_features(dir / "features.tsv", n, c);
  if (options.row_normalize) d.features = row_normalize(d.features);
  d.labels = read_labels(dir / "labels.tsv", n);

  const json split = read_json(dir / "split.json");
  try {
    d.split = Split(ids_from_json(split, "train", dir / "split.json"),
                    ids_from_json(split, "val", dir / "split.json"),
                    ids_from_json(split, "test", dir / "split.json"), n);
  } catch (const Error& e) {
    throw data_error(std::string("dataset '") + name + "': " + e.what());
  }
  validate(d);
  return d;
}

void save_dataset(const NodeDataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "features.tsv");
    std::string line;
    for (Index r = 0; r < d.features.rows(); ++r) {
      line.clear();
      for (Index col = 0; col < d.features.cols(); ++col) {
        if (col > 0) line += '\t';
        line += format_double(d.features(r, col));
      }
      out << line << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.tsv");
    for (int y : d.labels) out << y << '\n';
  }
  {
    std::ofstream out(dir / "edges.txt");
    write_edge_list(out, d.graph);
  }
  {
    std::ofstream out(dir / "split.json");
    out << json{{"train", d.split.train()}, {"val", d.split.validation()},
                {"test", d.split.test()}}
               .dump()
        << '\n';
  }
  {
    std::ofstream out(dir / "meta.json");
    out << json{{"n", d.graph.n_nodes()}, {"c", d.features.cols()}, {"k", d.num_classes}}
               .dump()
        << '\n';
  }
}

Split random_partition(NodeId n, std::size_t m, std::uint64_t seed) {
  if (m < 1 || static_cast<NodeId>(m) >= n) {
    throw invalid_argument("random_partition: need 1 <= m < n (m = " + std::to_string(m) +
                           ", n = " + std::to_string(n) + ")");
  }
  NodeIds ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), NodeId{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first m slots form a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  NodeIds train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m));
  NodeIds test(ids.begin() + static_cast<std::ptrdiff_t>(m), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return Split(std::move(train), {}, std::move(test), n);
}

Matrix one_hot(const Labels& labels, int k) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw invalid_argument("one_hot: label " + std::to_string(labels[i]) + " at node " +
                             std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

NodeDataset synthesize_two_block(NodeId n, double p_in, double p_out, std::uint64_t seed,
                                 const TwoBlockOptions& options) {
  if (n < 2 || n % 2 != 0) throw invalid_argument("synthesize_two_block: n must be even and >= 2");
  if (!(0.0 <= p_out && p_out < p_in && p_in <= 1.0)) {
    throw invalid_argument("synthesize_two_block: need 0 <= p_out < p_in <= 1");
  }
  if (options.noise_sigma < 0.0) {
    throw invalid_argument("synthesize_two_block: noise sigma must be >= 0");
  }
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw invalid_argument("synthesize_two_block: train fraction must lie in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, options.noise_sigma);

  const NodeId half = n / 2;
  auto block = [half](NodeId i) { return i < half ? 0 : 1; };
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      const double p = block(i) == block(j) ? p_in : p_out;
      if (unif(rng) < p) edges.emplace_back(i, j);
    }
  }

  NodeDataset d;
  d.name = "two_block";
  d.graph = SparseGraph(n, edges);
  d.num_classes = 2;
  d.labels.resize(static_cast<std::size_t>(n));
  d.features = Matrix::Zero(n, 2);
  for (NodeId i = 0; i < n; ++i) {
    d.labels[static_cast<std::size_t>(i)] = block(i);
    d.features(i, block(i)) = 1.0;
    for (Index c = 0; c < 2; ++c) {
      d.features(i, c) += options.noise_sigma > 0.0 ? noise(rng) : 0.0;
    }
  }
  auto m = static_cast<std::size_t>(std::lround(options.train_fraction * static_cast<double>(n)));
  m = std::clamp<std::size_t>(m, 1, static_cast<std::size_t>(n - 1));
  d.split = random_partition(n, m, seed ^ 0x5bd1e995ULL);
  return d;
}

}  // namespace gbgnn
