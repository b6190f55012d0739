#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "gbgnn/error.hpp"
#include "gbgnn/theory.hpp"

using namespace gbgnn;

namespace {

// Connected (a random spanning tree plus extra edges) and non-bipartite (a
// triangle on nodes 0, 1, 2).
SparseGraph random_connected(NodeId n, double extra, std::mt19937_64& rng) {
  std::vector<Edge> e{{0, 1}, {1, 2}, {0, 2}};
  for (NodeId i = 3; i < n; ++i) {
    std::uniform_int_distribution<NodeId> parent(0, i - 1);
    e.emplace_back(parent(rng), i);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      if (u(rng) < extra) e.emplace_back(i, j);
    }
  }
  return SparseGraph(n, e);
}

Matrix gaussian(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

}  // namespace

TEST_CASE("optimization bound") {
  const OptimizationBound b = optimization_bound(std::log(2.0), 10, {1.0}, 0.0);
  CHECK(b.value == doctest::Approx(2.0 * std::log(2.0) / 20.0));
  CHECK(b.value == doctest::Approx(0.0693).epsilon(1e-3));
  const OptimizationBound doubled = optimization_bound(std::log(2.0), 10, {1.0, 1.0}, 0.0);
  CHECK(doubled.value == doctest::Approx(b.value / 2.0));

  const std::vector<double> gammas(100, 0.5);
  const OptimizationBound c = optimization_bound(0.7, 5, gammas, 0.3);
  REQUIRE(c.reference.size() == 100);
  for (std::size_t t = 0; t < c.reference.size(); ++t) {
    CHECK(c.reference[t] * static_cast<double>(t + 1) == doctest::Approx(c.reference[0]));
  }
  CHECK(c.reference.back() == doctest::Approx(c.value));
  CHECK(c.value == doctest::Approx((1.0 + std::exp(0.3)) * 0.7 / (2.0 * 5.0 * 50.0)));

  CHECK_THROWS_AS(optimization_bound(0.7, 5, {0.0, 0.0}, 0.0), Error);
  CHECK_THROWS_AS(optimization_bound(0.7, 5, {}, 0.0), Error);
  CHECK_THROWS_AS(optimization_bound(0.7, 0, {1.0}, 0.0), Error);
}

TEST_CASE("complexity constants") {
  ComplexityConstants c;
  c.layers = 1;
  c.b_tilde = 123.0;
  c.m = 3;
  c.u = 5;
  CHECK(c.d() == doctest::Approx(2.0 * std::sqrt(2.0)));
  CHECK(rademacher_bound(c, 4.0) == doctest::Approx(2.0 * std::sqrt(2.0) * 4.0 / std::sqrt(15.0)));
  CHECK(rademacher_bound(c, 8.0) == doctest::Approx(2.0 * rademacher_bound(c, 4.0)));

  c.layers = 2;
  c.b_tilde = 1.0;
  c.c_tilde = {1.0};
  CHECK(c.d() == doctest::Approx(4.0 * std::sqrt(2.0)));
  c.layers = 3;
  c.b_tilde = 0.5;
  c.c_tilde = {2.0, 3.0};
  CHECK(c.d() == doctest::Approx(2.0 * std::sqrt(2.0) * 1.0 * 6.0));

  c.m = 3;
  c.u = 1;
  CHECK(c.p0() == doctest::Approx(3.0 / 16.0));
  c.m = 7;
  c.u = 7;
  CHECK(c.p0() == doctest::Approx(0.25));
  CHECK(c.q() == doctest::Approx(2.0 / 7.0));

  c.b_tilde = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("generalization bound") {
  const GeneralizationBound g = generalization_bound(0.1, {0.0}, 2, 2, 1.0, std::exp(-1.0));
  CHECK(g.confidence == doctest::Approx(std::sqrt(16.0 / 21.0)));
  CHECK(g.confidence == doctest::Approx(0.8729).epsilon(1e-4));
  CHECK(g.c0_term == doctest::Approx(1.0 * std::sqrt(2.0)));

  const GeneralizationBound bare = generalization_bound(0.25, {0.0, 0.0}, 10, 30, 0.0, 0.1);
  CHECK(bare.total() == doctest::Approx(0.25 + bare.confidence));
  CHECK(bare.c0_term == 0.0);

  CHECK(s_constant(10000, 10000) == doctest::Approx(1.0).epsilon(1e-3));

  // Monotone in every complexity term and in 1/delta'.
  const GeneralizationBound base = generalization_bound(0.1, {0.2, 0.3}, 20, 40);
  CHECK(generalization_bound(0.1, {0.25, 0.3}, 20, 40).total() > base.total());
  CHECK(generalization_bound(0.1, {0.2, 0.35}, 20, 40).total() > base.total());
  CHECK(generalization_bound(0.1, {0.2, 0.3}, 20, 40, 1.0, 0.01).total() > base.total());

  CHECK_THROWS_AS(generalization_bound(0.1, {}, 2, 2, 1.0, 1.0), Error);
  CHECK_THROWS_AS(generalization_bound(0.1, {}, 2, 2, 1.0, 0.0), Error);
  CHECK_THROWS_AS(generalization_bound(0.1, {}, 2, 2, -1.0, 0.5), Error);
  CHECK_THROWS_AS(generalization_bound(0.1, {-0.1}, 2, 2), Error);
  CHECK_THROWS_AS(generalization_bound(0.1, {}, 0, 2), Error);
}

TEST_CASE("Monte-Carlo transductive Rademacher complexity") {
  McOptions opts;
  opts.seed = 11;

  SUBCASE("singleton has zero complexity") {
    const McEstimate e = mc_transductive_rademacher({Vector::LinSpaced(6, -1.0, 2.0)}, 3, 3, opts);
    CHECK(std::abs(e.mean) <= 3.0 * e.stderr_);
    CHECK(e.stderr_ > 0.0);
  }

  SUBCASE("all sign patterns: analytic expectation of the L1 norm") {
    // sup over {-1, 0, 1}^N of <sigma, v> is ||sigma||_1, E = 2 N p0.
    const auto l1 = [](const Vector& s) { return s.lpNorm<1>(); };
    const McEstimate e = mc_transductive_rademacher(4, l1, 2, 2, opts);
    CHECK(std::abs(e.mean - 2.0) <= 3.0 * e.stderr_);

    std::vector<Vector> cube;
    for (int code = 0; code < 81; ++code) {
      Vector v(4);
      int c = code;
      for (Index i = 0; i < 4; ++i, c /= 3) v[i] = static_cast<double>(c % 3) - 1.0;
      cube.push_back(v);
    }
    const McEstimate explicit_set = mc_transductive_rademacher(cube, 2, 2, opts);
    CHECK(explicit_set.mean == e.mean);
    CHECK(explicit_set.stderr_ == e.stderr_);

    // p = 0.1 on M = 3, U = 5: Q N 2p.
    McOptions p01 = opts;
    p01.p = 0.1;
    const McEstimate ep = mc_transductive_rademacher(4, l1, 3, 5, p01);
    CHECK(std::abs(ep.mean - q_constant(3, 5) * 4 * 0.2) <= 3.0 * ep.stderr_);
  }

  SUBCASE("positive homogeneity") {
    std::mt19937_64 rng(3);
    std::vector<Vector> set;
    std::vector<Vector> twice;
    for (int i = 0; i < 20; ++i) {
      set.push_back(gaussian(8, 1, rng).col(0));
      twice.push_back(2.0 * set.back());
    }
    const McEstimate a = mc_transductive_rademacher(set, 4, 4, opts);
    const McEstimate b = mc_transductive_rademacher(twice, 4, 4, opts);
    CHECK(b.mean == doctest::Approx(2.0 * a.mean).epsilon(1e-12));  // same draws
    McOptions other = opts;
    other.seed = 99;
    const McEstimate c = mc_transductive_rademacher(twice, 4, 4, other);
    CHECK(std::abs(c.mean - 2.0 * a.mean) <= 3.0 * std::hypot(c.stderr_, b.stderr_));
  }

  SUBCASE("deterministic per seed and independent of the thread count") {
    std::mt19937_64 rng(4);
    std::vector<Vector> set;
    for (int i = 0; i < 10; ++i) set.push_back(gaussian(7, 1, rng).col(0));
    McOptions o = opts;
    o.samples = 5000;
    const McEstimate one = mc_transductive_rademacher(set, 3, 4, o);
    o.threads = 3;
    const McEstimate three = mc_transductive_rademacher(set, 3, 4, o);
    CHECK(one.mean == three.mean);
    CHECK(one.stderr_ == three.stderr_);
    o.symmetrized = true;
    const McEstimate sym = mc_transductive_rademacher(set, 3, 4, o);
    CHECK(sym.mean >= one.mean);
  }

  SUBCASE("p = 1/2 matches an independent classical sampler") {
    std::mt19937_64 rng(5);
    const Index n = 10;
    std::vector<Vector> set;
    for (int i = 0; i < 15; ++i) set.push_back(gaussian(n, 1, rng).col(0));
    McOptions half = opts;
    half.p = 0.5;
    const McEstimate trans = mc_transductive_rademacher(set, 4, 6, half);

    // Classical empirical Rademacher: (1/N) E sup <sigma, v>, sigma uniform on {-1, 1}^N.
    std::mt19937 other(12345);
    std::bernoulli_distribution coin(0.5);
    const int draws = 20000;
    double sum = 0.0;
    double sumsq = 0.0;
    for (int k = 0; k < draws; ++k) {
      Vector s(n);
      for (Index i = 0; i < n; ++i) s[i] = coin(other) ? 1.0 : -1.0;
      double best = -1e300;
      for (const Vector& v : set) best = std::max(best, v.dot(s));
      sum += best / n;
      sumsq += (best / n) * (best / n);
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
    const double scale = q_constant(4, 6) * n;
    CHECK(std::abs(trans.mean - scale * mean) <= 3.0 * std::hypot(trans.stderr_, scale * se));
  }

  CHECK_THROWS_AS(mc_transductive_rademacher(std::vector<Vector>{}, 2, 2, opts), Error);
  CHECK_THROWS_AS(mc_transductive_rademacher({Vector::Ones(3), Vector::Ones(4)}, 2, 2, opts), Error);
  McOptions bad = opts;
  bad.p = 0.7;
  CHECK_THROWS_AS(mc_transductive_rademacher({Vector::Ones(3)}, 2, 2, bad), Error);
}

TEST_CASE("complexity lower bound from the weak learning condition") {
  CHECK(wlc_complexity_lower_bound(1.0, 0.0) == 1.0);
  CHECK(wlc_complexity_lower_bound(2.0, 1.0) == 1.5);
  CHECK_THROWS_AS(wlc_complexity_lower_bound(1.0, 1.0), Error);
  CHECK_THROWS_AS(wlc_complexity_lower_bound(1.0, -0.1), Error);

  // V = {alpha g : g in {-1, 0, 1}^N}: every element satisfies the condition
  // with beta = 0 for its own g, so R(V) >= alpha.
  for (double alpha : {1.0, 2.5}) {
    McOptions opts;
    opts.seed = 21;
    const auto sup = [alpha](const Vector& s) { return alpha * s.lpNorm<1>(); };
    const McEstimate e = mc_transductive_rademacher(4, sup, 2, 2, opts);
    const double analytic = alpha * q_constant(2, 2) * 4 * 2 * 0.25;
    CHECK(std::abs(e.mean - analytic) <= 3.0 * e.stderr_);
    CHECK(e.mean + 3.0 * e.stderr_ >= wlc_complexity_lower_bound(alpha, 0.0));
  }
}

TEST_CASE("spectral smoothing report") {
  SUBCASE("component orthogonal to the top eigenvector vanishes") {
    const std::vector<Edge> e{{0, 1}};
    const PropagationMatrix a = augmented_adjacency(SparseGraph(2, e));
    Matrix x(2, 1);
    x << 1.0, -1.0;
    const SpectralTrajectory s = smoothing_report(a, x, 3);
    CHECK(s.rows[0].frob_direct == doctest::Approx(std::sqrt(2.0)));
    CHECK(s.rows[1].frob_direct == 0.0);
    CHECK(s.rows[1].frob_spectral < 1e-12);
    CHECK(s.rows[1].rank1_dist == 0.0);
    CHECK(std::isnan(s.rows[1].cos_xi1_max));
    CHECK(s.lambda1 == doctest::Approx(1.0));
  }

  SUBCASE("top eigenvector is a fixed point") {
    std::mt19937_64 rng(8);
    const SparseGraph g = random_connected(15, 0.2, rng);
    const PropagationMatrix a = normalized_adjacency(g);
    Matrix xi(15, 1);
    for (NodeId i = 0; i < 15; ++i) xi(i, 0) = std::sqrt(static_cast<double>(g.degree()[i]));
    xi /= xi.norm();
    const SpectralTrajectory s = smoothing_report(a, xi, 10);
    for (const SpectralRow& r : s.rows) {
      CHECK(r.frob_direct == doctest::Approx(1.0).epsilon(1e-10));
      CHECK(r.rank1_dist < 1e-10);
      CHECK(r.cos_xi1_max == doctest::Approx(1.0).epsilon(1e-10));
    }
  }

  SUBCASE("identity and monotone collapse on random graphs") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const NodeId n = 10 + 4 * trial;
      const SparseGraph g = random_connected(n, 0.1, rng);
      const Matrix x = gaussian(n, 3, rng);
      for (const PropagationMatrix& p : {normalized_adjacency(g), augmented_adjacency(g)}) {
        const SpectralTrajectory s = smoothing_report(p, x, 16);
        CHECK(s.max_relative_gap < 1e-6);
        CHECK(s.lambda1 == doctest::Approx(1.0));
        CHECK(s.lambda2 < 1.0 - 1e-9);
        for (std::size_t t = 1; t < s.rows.size(); ++t) {
          CHECK(s.rows[t].rank1_dist <= s.rows[t - 1].rank1_dist * (1.0 + 1e-12) + 1e-15);
          CHECK(s.rows[t].frob_direct <= s.rows[t - 1].frob_direct * (1.0 + 1e-12));
        }
      }
    }
  }

  SUBCASE("csv and errors") {
    const std::vector<Edge> e{{0, 1}, {1, 2}, {0, 2}};
    const PropagationMatrix a = augmented_adjacency(SparseGraph(3, e));
    const SpectralTrajectory s = smoothing_report(a, Matrix::Identity(3, 3), 2);
    std::stringstream ss;
    write_spectral_csv(ss, s);
    std::string header;
    std::getline(ss, header);
    CHECK(header == kSpectralHeader);
    int lines = 0;
    for (std::string line; std::getline(ss, line);) ++lines;
    CHECK(lines == 3);
    CHECK_THROWS_AS(smoothing_report(a, Matrix::Identity(3, 3), 2, 2), Error);
    CHECK_THROWS_AS(smoothing_report(a, Matrix::Identity(4, 3), 2), Error);
  }
}

TEST_CASE("geometric ratio test") {
  CHECK(geometric_ratio_test({1.0, 0.5, 0.25}).geometric);
  CHECK(geometric_ratio_test({1.0, 0.5, 0.25}).max_ratio == doctest::Approx(0.5));
  CHECK(!geometric_ratio_test({1.0, 1.0, 1.0}).geometric);
  CHECK(!geometric_ratio_test({1.0, 0.5}).geometric);
  CHECK(!geometric_ratio_test({}).geometric);
}

TEST_CASE("theory report on a functional run") {
  const NodeDataset d = synthesize_two_block(40, 0.3, 0.02, 3);
  ModelSpec spec;
  spec.hidden_layers = 1;
  spec.hidden_width = 8;
  spec.bias_every_layer = false;
  spec.train.epochs = 60;
  FunctionalConfig cfg;
  cfg.T = 5;
  const BoostResult run = run_functional_gb(d, spec, cfg);
  const TheoryReport r = theory_report(run.model, d, run.trace);
  REQUIRE(r.optimization);
  CHECK(r.gammas.size() == 5);
  CHECK(r.m + r.u == 40);
  bool all_pass = true;
  for (std::size_t t = 1; t < run.trace.size(); ++t) all_pass = all_pass && run.trace[t].wlc_pass;
  CHECK(r.optimization->guaranteed == all_pass);
  if (all_pass) CHECK(r.optimization->holds);
  CHECK(r.exact_class);
  CHECK(r.stages.size() == run.model.t_star);
  for (const StageComplexity& s : r.stages) {
    CHECK(std::isfinite(s.rademacher));
    CHECK(s.op_norm == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(r.generalization.train_term == r.optimization->bound.value);
  CHECK(r.generalization.complexity >= 0.0);
  CHECK(r.generalization.c0_term >= 0.0);
  CHECK(r.generalization.confidence >= 0.0);
  REQUIRE(r.spectral);
  CHECK(r.spectral->rows.size() == 33);

  const nlohmann::json j = to_json(r);
  for (const char* key : {"train_term", "complexity_term", "c0_term", "confidence_term", "c0", "delta_prime"}) {
    CHECK(j["test_error_bound"].contains(key));
  }
  CHECK(j.contains("optimization_bound"));
}

TEST_CASE("theory report: SAMME omits the optimization bound") {
  const NodeDataset d = synthesize_two_block(30, 0.3, 0.02, 4);
  ModelSpec spec;
  spec.hidden_width = 8;
  spec.train.epochs = 40;
  SammeConfig cfg;
  cfg.T = 3;
  const BoostResult run = run_samme(d, spec, cfg);
  TheoryOptions opts;
  opts.eigen_cap = 10;
  const TheoryReport r = theory_report(run.model, d, run.trace, opts);
  CHECK(!r.optimization);
  CHECK(!r.stages.empty());
  CHECK(r.spectral_skipped);
  CHECK(!r.exact_class);  // hidden biases
  const nlohmann::json j = to_json(r);
  CHECK(!j.contains("optimization_bound"));
  CHECK(j["rademacher"].size() == r.stages.size());
}

TEST_CASE("theory report on a two-node toy by hand") {
  NodeDataset d;
  d.name = "toy";
  const std::vector<Edge> e{{0, 1}};
  d.graph = SparseGraph(2, e);
  d.features.resize(2, 1);
  d.features << 1.0, -1.0;
  d.labels = {1, 0};
  d.num_classes = 2;
  d.split = Split({0}, {}, {1}, 2);
  ModelSpec spec;
  spec.hidden_layers = 0;
  spec.train.epochs = 50;
  FunctionalConfig cfg;
  cfg.T = 1;
  const BoostResult run = run_functional_gb(d, spec, cfg);
  TheoryOptions opts;
  opts.delta_prime = 0.05;
  const TheoryReport r = theory_report(run.model, d, run.trace, opts);
  CHECK(r.m == 1);
  CHECK(r.u == 1);

  // M = U = 1: Q = 2, S = 4 * 2 * 1 / (3 * 1), min(M, U) = 1.
  CHECK(r.generalization.c0_term == doctest::Approx(2.0));
  CHECK(r.generalization.confidence == doctest::Approx(std::sqrt(8.0 / 3.0 * 2.0 / 2.0 * std::log(20.0))));
  // L = 1 linear learner: D = 2 sqrt 2, learner input (X^(t), 1).
  const Replay rep = replay(run.model, d.features);
  double complexity = 0.0;
  for (std::size_t i = 0; i < run.model.t_star; ++i) {
    const double fro = std::sqrt(rep.representation_frobenius[i] * rep.representation_frobenius[i] + 2.0);
    complexity += std::abs(run.model.stages[i].weight) * 2.0 * std::sqrt(2.0) * fro;
  }
  CHECK(r.generalization.complexity == doctest::Approx(complexity));
  CHECK(std::isfinite(r.generalization.total()));
}
