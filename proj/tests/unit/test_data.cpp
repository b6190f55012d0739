#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "gbgnn/data.hpp"
#include "gbgnn/error.hpp"

using namespace gbgnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("gbgnn_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

NodeDataset tiny_dataset() {
  NodeDataset d;
  d.name = "tiny";
  const std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}};
  d.graph = SparseGraph(4, e);
  d.features.resize(4, 2);
  d.features << 0.1, 0.2, 1.0 / 3.0, 0.0, 0.0, 0.0, 5.0, 1e-17;
  d.labels = {0, 1, 1, 0};
  d.num_classes = 2;
  d.split = Split({0, 1}, {2}, {3}, 4);
  return d;
}

}  // namespace

TEST_CASE("split constants") {
  CHECK(q_constant(2, 2) == doctest::Approx(1.0));
  CHECK(s_constant(2, 2) == doctest::Approx(32.0 / 21.0));
  CHECK(std::abs(s_constant(10000, 10000) - 1.0) < 1e-3);
  CHECK_THROWS_AS(q_constant(0, 3), Error);
}

TEST_CASE("split validation") {
  CHECK_THROWS_AS(Split({0, 1}, {}, {1, 2}, 4), Error);
  CHECK_THROWS_AS(Split({}, {}, {1}, 4), Error);
  CHECK_THROWS_AS(Split({0}, {}, {}, 4), Error);
  CHECK_THROWS_AS(Split({0}, {}, {7}, 4), Error);
  Split s({0}, {1}, {2, 3}, 4);
  CHECK(s.m() == 1);
  CHECK(s.u() == 2);
}

TEST_CASE("random partition is a seeded uniform subset") {
  const Split a = random_partition(20, 6, 3);
  const Split b = random_partition(20, 6, 3);
  CHECK(a.train() == b.train());
  CHECK(a.m() == 6);
  CHECK(a.u() == 14);
  std::set<NodeId> all(a.train().begin(), a.train().end());
  all.insert(a.test().begin(), a.test().end());
  CHECK(all.size() == 20);
  CHECK_THROWS_AS(random_partition(5, 5, 0), Error);
}

TEST_CASE("row normalization leaves zero rows alone") {
  Matrix x(2, 3);
  x << 1, -1, 2, 0, 0, 0;
  const Matrix r = row_normalize(x);
  CHECK(r.row(0).cwiseAbs().sum() == doctest::Approx(1.0));
  CHECK(r.row(1).isZero());
}

TEST_CASE("one-hot encoding") {
  const Matrix y = one_hot({1, 0, 2}, 3);
  CHECK(y(0, 1) == 1.0);
  CHECK(y.sum() == 3.0);
  CHECK_THROWS_AS(one_hot({3}, 3), Error);
}

TEST_CASE("dataset round trip is exact") {
  const NodeDataset d = tiny_dataset();
  const fs::path dir = scratch_dir("roundtrip");
  save_dataset(d, dir);
  PlanetoidOptions raw;
  raw.row_normalize = false;
  const NodeDataset back = load_planetoid(dir, "tiny", raw);
  CHECK(back.features == d.features);
  CHECK(back.labels == d.labels);
  CHECK(back.graph.edges() == d.graph.edges());
  CHECK(back.split.train() == d.split.train());
  CHECK(back.split.validation() == d.split.validation());
  CHECK(back.split.test() == d.split.test());
}

TEST_CASE("loader reports missing files and count mismatches") {
  const fs::path dir = scratch_dir("broken");
  CHECK_THROWS_AS(load_planetoid(dir, "tiny"), Error);
  save_dataset(tiny_dataset(), dir);
  {
    std::ofstream meta(dir / "meta.json");
    meta << R"({"n": 4, "c": 2, "k": 2, "edge_lines": 9})";
  }
  try {
    load_planetoid(dir, "tiny");
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
    CHECK(std::string(e.what()).find("expected 9") != std::string::npos);
  }
  {
    std::ofstream meta(dir / "meta.json");
    meta << R"({"n": 4, "c": 2, "k": 2})";
  }
  // The known citation datasets are checked against their manifests.
  try {
    load_planetoid(dir, "cora");
    FAIL("expected a manifest error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("2708") != std::string::npos);
  }
}

TEST_CASE("manifests of the citation datasets") {
  CHECK(known_manifest("cora")->num_classes == 7);
  CHECK(known_manifest("citeseer")->num_classes == 6);
  CHECK(known_manifest("pubmed")->accepted_nodes.front() == 19717);
  CHECK(!known_manifest("unknown"));
}

TEST_CASE("two-block synthetic graph") {
  const NodeDataset d = synthesize_two_block(40, 0.5, 0.02, 11);
  CHECK_NOTHROW(validate(d));
  CHECK(d.split.m() == 20);
  int within = 0;
  int across = 0;
  for (const auto& [i, j] : d.graph.edges()) {
    (d.labels[static_cast<std::size_t>(i)] == d.labels[static_cast<std::size_t>(j)] ? within
                                                                                    : across)++;
  }
  CHECK(within > across);
  const NodeDataset again = synthesize_two_block(40, 0.5, 0.02, 11);
  CHECK(again.features == d.features);
  CHECK_THROWS_AS(synthesize_two_block(5, 0.5, 0.1, 0), Error);
}
