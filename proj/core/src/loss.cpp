#include "gbgnn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "gbgnn/error.hpp"

namespace gbgnn {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void check_binary(int label) {
  if (label != 0 && label != 1) {
    throw invalid_argument("binary loss: label must be 0 or 1, got " + std::to_string(label));
  }
}

}  // namespace

double sigmoid(double score) {
  if (score >= 0.0) return 1.0 / (1.0 + std::exp(-score));
  const double e = std::exp(score);
  return e / (1.0 + e);
}

int margin_loss(double score, int label, double delta) {
  check_binary(label);
  if (delta < 0.0) throw invalid_argument("margin_loss: delta must be >= 0");
  const double signed_label = 2.0 * label - 1.0;
  return (2.0 * sigmoid(score) - 1.0) * signed_label < delta ? 1 : 0;
}

double sigmoid_ce(double score, int label, double clip) {
  check_binary(label);
  // -log p = softplus(-s), -log(1 - p) = softplus(s).
  const double value = label == 1 ? softplus(-score) : softplus(score);
  return std::min(value, -std::log(clip));
}

double sigmoid_ce_curvature(double score) {
  const double p = sigmoid(score);
  return p * (1.0 - p);
}

double surrogate_loss(const Vector& scores, const Labels& labels, const NodeIds& train,
                      double clip) {
  if (train.empty()) throw invalid_argument("surrogate_loss: empty train set");
  double total = 0.0;
  for (NodeId n : train) total += sigmoid_ce(scores[n], labels[static_cast<std::size_t>(n)], clip);
  return total / static_cast<double>(train.size());
}

Vector surrogate_grad(const Vector& scores, const Labels& labels, const NodeIds& train) {
  if (train.empty()) throw invalid_argument("surrogate_grad: empty train set");
  const double inv_m = 1.0 / static_cast<double>(train.size());
  Vector g = Vector::Zero(scores.size());
  for (NodeId n : train) {
    const int y = labels[static_cast<std::size_t>(n)];
    check_binary(y);
    g[n] = inv_m * (sigmoid(scores[n]) - y);
  }
  return g;
}

ErrorSummary errors(const Vector& scores, const Labels& labels, const Split& split,
                    double delta, double clip) {
  if (split.train().empty() || split.test().empty()) {
    throw invalid_argument("errors: train and test sets must be nonempty");
  }
  ErrorSummary s;
  for (NodeId n : split.train()) {
    s.train_err += margin_loss(scores[n], labels[static_cast<std::size_t>(n)], delta);
  }
  for (NodeId n : split.test()) {
    s.test_err += margin_loss(scores[n], labels[static_cast<std::size_t>(n)], delta);
  }
  s.train_err /= static_cast<double>(split.m());
  s.test_err /= static_cast<double>(split.u());
  s.surrogate = surrogate_loss(scores, labels, split.train(), clip);
  return s;
}

int argmax_row(const Matrix& scores, Index row) {
  Index best = 0;
  for (Index k = 1; k < scores.cols(); ++k) {
    if (scores(row, k) > scores(row, best)) best = k;
  }
  return static_cast<int>(best);
}

Labels argmax_rows(const Matrix& scores) {
  Labels out(static_cast<std::size_t>(scores.rows()));
  for (Index r = 0; r < scores.rows(); ++r) out[static_cast<std::size_t>(r)] = argmax_row(scores, r);
  return out;
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    out.row(r) = (scores.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

double zero_one_error(const Labels& predicted, const Labels& labels, const NodeIds& ids) {
  if (ids.empty()) throw invalid_argument("zero_one_error: empty node set");
  std::size_t wrong = 0;
  for (NodeId n : ids) {
    const auto i = static_cast<std::size_t>(n);
    if (predicted[i] != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(ids.size());
}

double softmax_ce(const Matrix& scores, const Labels& labels, const NodeIds& ids, double clip) {
  if (ids.empty()) throw invalid_argument("softmax_ce: empty node set");
  const double cap = -std::log(clip);
  double total = 0.0;
  for (NodeId n : ids) {
    const auto row = scores.row(n);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += std::min(lse - row[labels[static_cast<std::size_t>(n)]], cap);
  }
  return total / static_cast<double>(ids.size());
}

ErrorSummary errors(const Matrix& scores, const Labels& labels, const Split& split,
                    double clip) {
  if (split.train().empty() || split.test().empty()) {
    throw invalid_argument("errors: train and test sets must be nonempty");
  }
  const Labels predicted = argmax_rows(scores);
  ErrorSummary s;
  s.train_err = zero_one_error(predicted, labels, split.train());
  s.test_err = zero_one_error(predicted, labels, split.test());
  s.surrogate = softmax_ce(scores, labels, split.train(), clip);
  return s;
}

}  // namespace gbgnn
