#include "gbgnn/aggregate.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "gbgnn/error.hpp"

namespace gbgnn {

using nlohmann::json;

std::string to_string(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::kFixed: return "fixed";
    case AggregatorKind::kInputInjection: return "input_injection";
    case AggregatorKind::kKta: return "kta";
  }
  return "fixed";
}

void AlignmentConfig::validate() const {
  if (epochs < 1) throw invalid_argument("AlignmentConfig: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw invalid_argument("AlignmentConfig: learning rate must be > 0");
}

Aggregator Aggregator::fixed(PropagationMatrix p) {
  Aggregator a;
  a.kind_ = AggregatorKind::kFixed;
  a.base_ = std::move(p);
  return a;
}

Aggregator Aggregator::input_injection(double rho, PropagationMatrix p) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw invalid_argument("input injection: rho must lie in [0, 1]");
  Aggregator a;
  a.kind_ = AggregatorKind::kInputInjection;
  a.base_ = std::move(p);
  a.rho_ = rho;
  return a;
}

Aggregator Aggregator::kta(PropagationMatrix base, int degree) {
  if (degree < 0) throw invalid_argument("KTA: degree must be >= 0");
  Aggregator a;
  a.kind_ = AggregatorKind::kKta;
  a.degree_ = degree;
  a.weights_ = Vector::Ones(degree + 2);
  for (int k = 0; k <= degree; ++k) a.powers_.push_back(base.power(1 << k));
  a.base_ = std::move(base);
  return a;
}

void Aggregator::set_kta_weights(const Vector& w) {
  if (kind_ != AggregatorKind::kKta) throw invalid_argument("set_kta_weights: not a KTA aggregator");
  if (w.size() != degree_ + 2) {
    throw invalid_argument("set_kta_weights: expected " + std::to_string(degree_ + 2) +
                           " weights, got " + std::to_string(w.size()));
  }
  if (!w.allFinite()) throw numeric_error("set_kta_weights: non-finite weights");
  weights_ = w;
}

namespace {

// (x, P x, P^2 x, P^4 x, ...) with one sparse product per power of P.
template <class Step>
std::vector<Matrix> doubling_terms(const Matrix& x, int degree, Step&& step) {
  std::vector<Matrix> terms;
  terms.reserve(static_cast<std::size_t>(degree) + 2);
  terms.push_back(x);
  Matrix current = x;
  int power = 0;
  for (int k = 0; k <= degree; ++k) {
    const int target = 1 << k;
    while (power < target) {
      current = step(current);
      ++power;
    }
    terms.push_back(current);
  }
  return terms;
}

}  // namespace

std::vector<Matrix> Aggregator::kta_terms(const Matrix& x) const {
  if (kind_ != AggregatorKind::kKta) throw invalid_argument("kta_terms: not a KTA aggregator");
  if (x.rows() != base_.dimension()) throw invalid_argument("kta_terms: row count mismatch");
  return doubling_terms(x, degree_, [this](const Matrix& m) { return base_.apply(m); });
}

std::vector<Matrix> Aggregator::kta_terms_transpose(const Matrix& x) const {
  if (kind_ != AggregatorKind::kKta) throw invalid_argument("kta_terms: not a KTA aggregator");
  if (x.rows() != base_.dimension()) throw invalid_argument("kta_terms: row count mismatch");
  return doubling_terms(x, degree_, [this](const Matrix& m) { return base_.apply_transpose(m); });
}

Matrix Aggregator::apply(const Matrix& x_t, const Matrix* x_initial) const {
  if (x_t.rows() != base_.dimension()) {
    throw invalid_argument("aggregator: input has " + std::to_string(x_t.rows()) +
                           " rows, operator dimension is " + std::to_string(base_.dimension()));
  }
  switch (kind_) {
    case AggregatorKind::kFixed:
      return base_.apply(x_t);
    case AggregatorKind::kInputInjection: {
      if (x_initial == nullptr) throw invalid_argument("input injection: initial features missing");
      if (x_initial->rows() != x_t.rows() || x_initial->cols() != x_t.cols()) {
        throw invalid_argument("input injection: initial features shape mismatch");
      }
      return rho_ * base_.apply(x_t) + (1.0 - rho_) * *x_initial;
    }
    case AggregatorKind::kKta: {
      const auto terms = kta_terms(x_t);
      Matrix out = weights_[0] * terms[0];
      for (std::size_t j = 1; j < terms.size(); ++j) out += weights_[static_cast<Index>(j)] * terms[j];
      return out;
    }
  }
  return x_t;
}

Matrix Aggregator::apply_linear(const Matrix& x_t) const {
  if (kind_ == AggregatorKind::kInputInjection) return rho_ * base_.apply(x_t);
  return apply(x_t);
}

Matrix Aggregator::apply_adjoint(const Matrix& upstream) const {
  switch (kind_) {
    case AggregatorKind::kFixed:
      return base_.apply_transpose(upstream);
    case AggregatorKind::kInputInjection:
      return rho_ * base_.apply_transpose(upstream);
    case AggregatorKind::kKta: {
      const auto terms = kta_terms_transpose(upstream);
      Matrix out = weights_[0] * terms[0];
      for (std::size_t j = 1; j < terms.size(); ++j) out += weights_[static_cast<Index>(j)] * terms[j];
      return out;
    }
  }
  return upstream;
}

double Aggregator::operator_norm() const {
  const Index n = base_.dimension();
  return operator_norm_of(
      n, [this](const Vector& v) { return Vector(apply_linear(v)); },
      [this](const Vector& v) { return Vector(apply_adjoint(v)); });
}

json Aggregator::to_json() const {
  json j{{"kind", to_string(kind_)}};
  if (kind_ == AggregatorKind::kInputInjection) j["rho"] = rho_;
  if (kind_ == AggregatorKind::kKta) {
    j["degree"] = degree_;
    j["weights"] = std::vector<double>(weights_.data(), weights_.data() + weights_.size());
  }
  return j;
}

Aggregator Aggregator::from_json(const json& j, PropagationMatrix base) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "fixed") return fixed(std::move(base));
    if (kind == "input_injection") return input_injection(j.at("rho").get<double>(), std::move(base));
    if (kind == "kta") {
      Aggregator a = kta(std::move(base), j.at("degree").get<int>());
      const auto w = j.at("weights").get<std::vector<double>>();
      a.set_kta_weights(Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())));
      return a;
    }
    throw data_error("aggregator JSON: unknown kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw data_error(std::string("aggregator JSON: ") + e.what());
  }
}

Matrix double_channels(const Matrix& x) {
  Matrix out(x.rows(), 2 * x.cols());
  out << x, x;
  return out;
}

Matrix apply_injection_doubled(const Aggregator& a, const Matrix& stacked) {
  if (a.kind() != AggregatorKind::kInputInjection) {
    throw invalid_argument("apply_injection_doubled: not an input-injection aggregator");
  }
  if (stacked.cols() % 2 != 0) throw invalid_argument("apply_injection_doubled: odd channel count");
  const Index c = stacked.cols() / 2;
  const Matrix carried = stacked.rightCols(c);
  Matrix out(stacked.rows(), stacked.cols());
  out << a.apply(stacked.leftCols(c), &carried), carried;
  return out;
}

Matrix gram(const Matrix& z, const NodeIds& train) {
  if (train.size() < 2) throw invalid_argument("gram: need at least 2 train nodes");
  const Matrix zt = gather_rows(z, train);
  return zt * zt.transpose();
}

double alignment(const Matrix& z, const Matrix& z_prime, const NodeIds& train) {
  const Matrix k = gram(z, train);
  const Matrix kp = gram(z_prime, train);
  const double nk = k.norm();
  const double nkp = kp.norm();
  if (nk == 0.0 || nkp == 0.0) throw invalid_argument("alignment: Gram matrix is all-zero");
  return k.cwiseProduct(kp).sum() / (nk * nkp);
}

KtaObjective kta_objective(const std::vector<Matrix>& train_terms, const Matrix& train_labels,
                           const Vector& weights) {
  if (train_terms.empty() || static_cast<Index>(train_terms.size()) != weights.size()) {
    throw invalid_argument("kta_objective: one weight per term is required");
  }
  Matrix z = weights[0] * train_terms[0];
  for (std::size_t j = 1; j < train_terms.size(); ++j) z += weights[static_cast<Index>(j)] * train_terms[j];
  const Matrix k = z * z.transpose();
  const Matrix ky = train_labels * train_labels.transpose();
  const double a = k.cwiseProduct(ky).sum();
  const double b = k.norm();
  const double c = ky.norm();
  const double denom = b * c + kAlignmentEps;
  KtaObjective out;
  out.value = a / denom;
  // d value / dK, then dK/dZ = (G + G^T) Z with G symmetric.
  Matrix dk = ky / denom;
  if (b > 0.0) dk -= (a * c / (denom * denom * b)) * k;
  const Matrix dz = 2.0 * dk * z;
  out.gradient.resize(weights.size());
  for (std::size_t j = 0; j < train_terms.size(); ++j) {
    out.gradient[static_cast<Index>(j)] = dz.cwiseProduct(train_terms[j]).sum();
  }
  return out;
}

KtaFit fit_kta(const Aggregator& a, const Matrix& x_t, const NodeIds& train,
               const Matrix& train_labels_onehot, const AlignmentConfig& cfg) {
  if (a.kind() != AggregatorKind::kKta) throw invalid_argument("fit_kta: not a KTA aggregator");
  cfg.validate();
  if (train_labels_onehot.rows() != static_cast<Index>(train.size())) {
    throw invalid_argument("fit_kta: label matrix must hold exactly the train rows");
  }
  if (train.size() < 2) throw invalid_argument("fit_kta: need at least 2 train nodes");
  std::vector<Matrix> terms;
  for (const Matrix& t : a.kta_terms(x_t)) terms.push_back(gather_rows(t, train));

  Vector w = a.kta_weights();
  KtaFit fit;
  fit.initial_alignment = kta_objective(terms, train_labels_onehot, w).value;
  Optimizer opt(cfg.optimizer, cfg.learning_rate, 0.9, 0.0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const KtaObjective obj = kta_objective(terms, train_labels_onehot, w);
    if (obj.gradient.squaredNorm() == 0.0) break;  // stall: keep current weights
    opt.step(w, Vector(-obj.gradient));
    if (!w.allFinite()) throw numeric_error("fit_kta: weights diverged");
  }
  fit.final_alignment = kta_objective(terms, train_labels_onehot, w).value;
  const double l1 = w.lpNorm<1>();
  if (l1 > 0.0) w /= l1;
  fit.aggregator = a;
  fit.aggregator.set_kta_weights(w);
  return fit;
}

}  // namespace gbgnn
