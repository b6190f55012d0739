#include <doctest.h>

#include <nlohmann/json.hpp>

#include <random>

#include "gbgnn/data.hpp"
#include "gbgnn/error.hpp"
#include "gbgnn/loss.hpp"
#include "gbgnn/mlp.hpp"

using namespace gbgnn;

namespace {

Matrix random_dense(Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

// Independent matrix-chain evaluation of a ReLU network with biases.
Matrix chain_oracle(const MlpParams& p, const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Matrix& w = p.weights[l];
    Matrix z = h * w.topRows(h.cols());
    if (w.rows() == h.cols() + 1) z.rowwise() += w.row(h.cols());
    h = l + 1 == p.weights.size() ? z : Matrix(z.cwiseMax(0.0));
  }
  return h;
}

double objective(const MlpParams& p, const Matrix& x, const Matrix& up) {
  return forward(p, x).cwiseProduct(up).sum();
}

NodeIds iota_ids(NodeId n) {
  NodeIds ids(static_cast<std::size_t>(n));
  for (NodeId i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

}  // namespace

TEST_CASE("forward: identity layer and zero weights") {
  MlpArchitecture arch = MlpArchitecture::make(3, 0, 0, 3);
  MlpParams p = zero_mlp(arch);
  const Matrix x = random_dense(5, 3, 1);
  CHECK(forward(p, x).isZero());
  p.weights[0].topRows(3).setIdentity();
  CHECK(forward(p, x) == x);
  CHECK_THROWS_AS(forward(p, random_dense(5, 4, 1)), Error);
}

TEST_CASE("forward matches an independent chain oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MlpParams p = init_mlp(MlpArchitecture::make(4, 2, 6, 3), seed);
    const Matrix x = random_dense(7, 4, seed + 10);
    CHECK((forward(p, x) - chain_oracle(p, x)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward broadcasts one function over rows") {
  const MlpParams p = init_mlp(MlpArchitecture::make(3, 1, 5, 2), 4);
  const Matrix x = random_dense(6, 3, 5);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  CHECK((forward(p, perm * x) - perm * forward(p, x)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("backward: zero upstream and linear closed form") {
  MlpParams p = init_mlp(MlpArchitecture::make(3, 0, 0, 1), 2);
  const Matrix x = random_dense(8, 3, 3);
  ForwardCache cache;
  const Matrix out = forward(p, x, {}, &cache);
  const MlpGradients zero = backward(p, cache, Matrix::Zero(8, 1));
  CHECK(zero.weights[0].isZero());
  const Matrix target = random_dense(8, 1, 4);
  const Matrix residual = out - target;
  // d/dW of 0.5 ||xW - t||^2 = x_aug^T residual.
  const MlpGradients g = backward(p, cache, residual);
  Matrix xa(8, 4);
  xa << x, Matrix::Ones(8, 1);
  CHECK((g.weights[0] - xa.transpose() * residual).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward detects a stale cache") {
  MlpParams p = init_mlp(MlpArchitecture::make(3, 1, 4, 1), 2);
  const Matrix x = random_dense(4, 3, 3);
  ForwardCache cache;
  forward(p, x, {}, &cache);
  p.weights[0](0, 0) += 1.0;
  CHECK_THROWS_AS(backward(p, cache, Matrix::Ones(4, 1)), Error);
}

TEST_CASE("backward matches central finite differences for L = 1..5") {
  for (int hidden = 0; hidden <= 4; ++hidden) {
    for (bool bias_all : {true, false}) {
      for (Activation act : {Activation::kRelu, Activation::kSigmoid}) {
        MlpArchitecture arch = MlpArchitecture::make(4, hidden, 5, 3);
        arch.bias_every_layer = bias_all;
        arch.activation = act;
        const MlpParams p = init_mlp(arch, 17 + static_cast<std::uint64_t>(hidden));
        const Matrix x = random_dense(6, 4, 23);
        const Matrix up = random_dense(6, 3, 29);
        ForwardCache cache;
        forward(p, x, {}, &cache);
        const MlpGradients g = backward(p, cache, up, true);
        const double eps = 1e-4;
        double worst = 0.0;
        for (std::size_t l = 0; l < p.weights.size(); ++l) {
          for (Index i = 0; i < p.weights[l].size(); ++i) {
            MlpParams pp = p;
            MlpParams pm = p;
            pp.weights[l].data()[i] += eps;
            pm.weights[l].data()[i] -= eps;
            const double fd = (objective(pp, x, up) - objective(pm, x, up)) / (2 * eps);
            const double an = g.weights[l].data()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
          }
        }
        for (Index i = 0; i < x.size(); ++i) {
          Matrix xp = x;
          Matrix xm = x;
          xp.data()[i] += eps;
          xm.data()[i] -= eps;
          const double fd = (objective(p, xp, up) - objective(p, xm, up)) / (2 * eps);
          worst = std::max(worst, std::abs(fd - g.input.data()[i]) / std::max(1.0, std::abs(fd)));
        }
        CHECK(worst < 1e-5);
      }
    }
  }
}

TEST_CASE("dropout only in train mode and deterministic under seed") {
  const MlpParams p = init_mlp(MlpArchitecture::make(3, 1, 16, 2), 1);
  const Matrix x = random_dense(5, 3, 2);
  ForwardOptions train;
  train.train_mode = true;
  train.dropout_ratio = 0.5;
  train.seed = 9;
  CHECK(forward(p, x, train) == forward(p, x, train));
  CHECK(forward(p, x, train) != forward(p, x));
  ForwardOptions eval = train;
  eval.train_mode = false;
  CHECK(forward(p, x, eval) == forward(p, x));
}

TEST_CASE("L1 column projection") {
  MlpParams p = zero_mlp(MlpArchitecture::make(1, 0, 0, 3));
  p.weights[0] << 3, 0.2, 1, 0, 0.3, -1;
  const MlpParams q = project_l1_columns(p, 1.0);
  CHECK(q.weights[0](0, 0) == doctest::Approx(1.0));
  CHECK(q.weights[0](1, 0) == 0.0);
  CHECK(q.weights[0].col(1) == p.weights[0].col(1));
  MlpParams r = zero_mlp(MlpArchitecture::make(2, 0, 0, 1));
  r.weights[0] << 1, -1, 2;
  const MlpParams s = project_l1_columns(r, 2.0);
  CHECK(s.weights[0](0, 0) == doctest::Approx(0.5));
  CHECK(s.weights[0](1, 0) == doctest::Approx(-0.5));
  CHECK(s.weights[0](2, 0) == doctest::Approx(1.0));
  CHECK(max_column_l1(s) == doctest::Approx(2.0));
  CHECK_THROWS_AS(project_l1_columns(r, 0.0), Error);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate(10));
  cfg.batch_size = 11;
  CHECK_THROWS_AS(cfg.validate(10), Error);
  cfg.batch_size = 0;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(10), Error);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(10), Error);
}

TEST_CASE("fit_to_gradient: zero target and realizable linear target") {
  const Matrix x = random_dense(30, 3, 5);
  const NodeIds train = iota_ids(20);
  const MlpArchitecture arch = MlpArchitecture::make(3, 0, 0, 1);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  Vector zero = Vector::Zero(30);
  const RegressionFit z = fit_to_gradient(zero_mlp(arch), cfg, x, zero, train);
  CHECK(z.train_mse == 0.0);

  Vector target = Vector::Zero(30);
  for (NodeId n : train) target[n] = 0.5 * x(n, 0) - 2.0 * x(n, 2) + 0.25;
  cfg.epochs = 3000;
  cfg.learning_rate = 0.05;
  const RegressionFit f = fit_to_gradient(init_mlp(arch, 1), cfg, x, target, train);
  CHECK(f.train_mse < 1e-6);

  Vector leaky = target;
  leaky[25] = 1.0;
  CHECK_THROWS_AS(fit_to_gradient(zero_mlp(arch), cfg, x, leaky, train), Error);
}

TEST_CASE("fit_to_gradient reports divergence as a numeric error") {
  const Matrix x = 100.0 * random_dense(10, 3, 5);
  const NodeIds train = iota_ids(10);
  Vector target = Vector::Ones(10);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.learning_rate = 10.0;
  cfg.epochs = 200;
  try {
    fit_to_gradient(init_mlp(MlpArchitecture::make(3, 0, 0, 1), 0), cfg, x, target, train);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
    CHECK(std::string(e.what()).find("last finite loss") != std::string::npos);
  }
}

TEST_CASE("fit_to_gradient on a two-block gradient target is positively aligned") {
  int aligned = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const NodeDataset d = synthesize_two_block(40, 0.4, 0.05, seed);
    const Vector g = surrogate_grad(Vector::Zero(40), d.labels, d.split.train());
    const Vector target = -static_cast<double>(d.split.m()) * g;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = seed;
    const RegressionFit fit = fit_to_gradient(
        init_mlp(MlpArchitecture::make(2, 1, 16, 1), seed), cfg, d.features, target,
        d.split.train());
    const Matrix out = forward(fit.params, d.features);
    double dot = 0.0;
    double nf = 0.0;
    for (NodeId n : d.split.train()) {
      dot += out(n, 0) * target[n];
      nf += out(n, 0) * out(n, 0);
    }
    if (nf > 0.0 && dot / (std::sqrt(nf) * target.norm()) > 0.0) ++aligned;
  }
  CHECK(aligned >= 95);
}

TEST_CASE("fit_classifier: separable blobs, point mass and information-less input") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.3);
  Matrix x(40, 2);
  std::vector<int> y(40);
  for (Index i = 0; i < 40; ++i) {
    y[static_cast<std::size_t>(i)] = i < 20 ? 0 : 1;
    x(i, 0) = (i < 20 ? -1.0 : 1.0) + nd(rng);
    x(i, 1) = nd(rng);
  }
  const NodeIds train = iota_ids(40);
  const Vector uniform = Vector::Constant(40, 1.0 / 40);
  TrainConfig cfg;
  const auto arch = MlpArchitecture::make(2, 0, 0, 2, OutputHead::kArgmax);
  const ClassifierFit blobs = fit_classifier(init_mlp(arch, 1), cfg, x, y, uniform, train);
  CHECK(blobs.weighted_error < 0.5);
  CHECK(blobs.weighted_error < 0.1);

  Vector point = Vector::Zero(40);
  point[5] = 1.0;
  std::vector<int> flipped = y;
  flipped[5] = 1;  // the lone weighted node carries a label against its blob
  const ClassifierFit one = fit_classifier(init_mlp(arch, 2), cfg, x, flipped, point, train);
  CHECK(predict_classes(one.params, x)[5] == 1);
  CHECK(one.weighted_error == 0.0);

  const Matrix constant = Matrix::Ones(40, 2);
  std::vector<int> y3(40);
  Vector w(40);
  for (Index i = 0; i < 40; ++i) {
    y3[static_cast<std::size_t>(i)] = static_cast<int>(i % 3);
    w[i] = i % 3 == 0 ? 3.0 : 1.0;
  }
  const auto arch3 = MlpArchitecture::make(2, 0, 0, 3, OutputHead::kArgmax);
  const ClassifierFit flat = fit_classifier(init_mlp(arch3, 3), cfg, constant, y3, w, train);
  const double max_share = 14.0 * 3.0 / (14.0 * 3.0 + 26.0);
  CHECK(flat.weighted_error >= 1.0 - max_share - 1e-12);

  CHECK_THROWS_AS(fit_classifier(init_mlp(arch, 1), cfg, x, y, Vector::Zero(40), train), Error);
}

TEST_CASE("training is deterministic") {
  const Matrix x = random_dense(30, 3, 5);
  Vector target = Vector::Zero(30);
  const NodeIds train = iota_ids(20);
  for (NodeId n : train) target[n] = std::sin(x(n, 0));
  TrainConfig cfg;
  cfg.batch_size = 7;
  cfg.dropout = true;
  cfg.seed = 42;
  cfg.epochs = 20;
  const auto arch = MlpArchitecture::make(3, 2, 8, 1);
  const RegressionFit a = fit_to_gradient(init_mlp(arch, 1), cfg, x, target, train);
  const RegressionFit b = fit_to_gradient(init_mlp(arch, 1), cfg, x, target, train);
  for (std::size_t l = 0; l < a.params.weights.size(); ++l) {
    CHECK(a.params.weights[l] == b.params.weights[l]);
  }
}

TEST_CASE("theory-mode bound is active after training") {
  const Matrix x = random_dense(30, 3, 5);
  Vector target = Vector::Zero(30);
  const NodeIds train = iota_ids(20);
  for (NodeId n : train) target[n] = 10.0 * x(n, 0);
  TrainConfig cfg;
  cfg.l1_column_bound = 0.5;
  const RegressionFit f =
      fit_to_gradient(init_mlp(MlpArchitecture::make(3, 1, 8, 1), 1), cfg, x, target, train);
  CHECK(max_column_l1(f.params) <= 0.5 + 1e-12);
}

TEST_CASE("optimizers reduce a quadratic") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kMomentum, OptimizerKind::kAdam,
                    OptimizerKind::kRmsprop}) {
    Optimizer opt(kind, 0.05, 0.9, 0.0);
    Vector v = Vector::Constant(3, 2.0);
    for (int i = 0; i < 300; ++i) opt.step(v, Vector(2.0 * v));
    CHECK(v.norm() < 0.2);
  }
}

TEST_CASE("parameter JSON round trip is exact") {
  MlpArchitecture arch = MlpArchitecture::make(3, 2, 4, 2, OutputHead::kSoftmax);
  arch.bias_every_layer = false;
  arch.activation = Activation::kSigmoid;
  const MlpParams p = init_mlp(arch, 8);
  const MlpParams q = mlp_from_json(nlohmann::json::parse(to_json(p).dump()));
  CHECK(q.fingerprint() == p.fingerprint());
  CHECK(q.arch.head == OutputHead::kSoftmax);
  CHECK(!q.arch.bias_every_layer);
  nlohmann::json bad = to_json(p);
  bad["layers"][0]["rows"] = 99;
  CHECK_THROWS_AS(mlp_from_json(bad), Error);
}

TEST_CASE("heads") {
  Matrix raw(2, 3);
  raw << 1, 3, 3, 0, 0, 0;
  const Matrix hard = apply_head(OutputHead::kArgmax, raw);
  CHECK(hard(0, 1) == 1.0);
  CHECK(hard.sum() == 2.0);
  CHECK(apply_head(OutputHead::kSoftmax, raw).row(1).sum() == doctest::Approx(1.0));
  CHECK(apply_head(OutputHead::kIdentity, raw) == raw);
}
