#pragma once

#include <nlohmann/json_fwd.hpp>

#include <vector>

#include "gbgnn/graph.hpp"
#include "gbgnn/mlp.hpp"
#include "gbgnn/types.hpp"

namespace gbgnn {

enum class AggregatorKind { kFixed, kInputInjection, kKta };

std::string to_string(AggregatorKind k);

inline constexpr int kDefaultKtaDegree = 3;
/// Added to alignment denominators so a vanishing Gram matrix cannot divide
/// by zero mid-ascent.
inline constexpr double kAlignmentEps = 1e-12;

struct AlignmentConfig {
  int epochs = 10;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-2;

  void validate() const;
};

/// One node-mixing map g^(t).
///
///   Fixed:           x -> P x
///   InputInjection:  x -> rho P x + (1 - rho) x_initial
///   Kta:             x -> w x + sum_k w_k P^(2^k) x,  k = 0..N_deg
class Aggregator {
 public:
  Aggregator() = default;

  static Aggregator fixed(PropagationMatrix p);
  static Aggregator input_injection(double rho, PropagationMatrix p);
  /// Weights start at 1 (w and every w_k).
  static Aggregator kta(PropagationMatrix base, int degree = kDefaultKtaDegree);

  AggregatorKind kind() const noexcept { return kind_; }
  const PropagationMatrix& base() const noexcept { return base_; }
  double rho() const noexcept { return rho_; }
  int degree() const noexcept { return degree_; }
  /// (w, w_0, ..., w_{N_deg}); empty unless Kta.
  const Vector& kta_weights() const noexcept { return weights_; }
  void set_kta_weights(const Vector& w);
  /// Cached P^(2^k), k = 0..N_deg, as lazy factor chains.
  const std::vector<PropagationMatrix>& kta_powers() const noexcept { return powers_; }

  Matrix apply(const Matrix& x_t, const Matrix* x_initial = nullptr) const;
  /// The part of apply() that is linear in x_t (injection drops its constant
  /// input term; the other kinds equal apply()).
  Matrix apply_linear(const Matrix& x_t) const;
  /// Adjoint of apply_linear.
  Matrix apply_adjoint(const Matrix& upstream) const;

  /// Kta basis terms (x, P x, P^2 x, P^4 x, ..., P^(2^N_deg) x).
  std::vector<Matrix> kta_terms(const Matrix& x) const;
  /// Same construction with P^T, used for adjoints.
  std::vector<Matrix> kta_terms_transpose(const Matrix& x) const;

  /// Operator norm of the linear part, by power iteration.
  double operator_norm() const;

  nlohmann::json to_json() const;
  /// The propagation matrix is not serialized; callers rebuild it from the
  /// dataset and pass it back in.
  static Aggregator from_json(const nlohmann::json& j, PropagationMatrix base);

 private:
  AggregatorKind kind_ = AggregatorKind::kFixed;
  PropagationMatrix base_;
  double rho_ = 1.0;
  int degree_ = 0;
  Vector weights_;
  std::vector<PropagationMatrix> powers_;  // P^(2^k) as lazy factor chains
};

/// (x, x): the doubled input space on which input injection acts as an
/// ordinary aggregation.
Matrix double_channels(const Matrix& x);
/// Injection on the doubled space: (a, b) -> (rho P a + (1 - rho) b, b).
Matrix apply_injection_doubled(const Aggregator& a, const Matrix& stacked);

/// K[Z]_ij = <Z_i, Z_j> over train rows. Throws if fewer than 2 train nodes.
Matrix gram(const Matrix& z, const NodeIds& train);

/// Cosine of the flattened Gram matrices. Throws if either is all-zero.
double alignment(const Matrix& z, const Matrix& z_prime, const NodeIds& train);

struct KtaObjective {
  double value = 0.0;
  Vector gradient;  // d value / d (w, w_0..w_{N_deg})
};

/// Alignment of sum_j weights_j * terms_j with the label matrix, and its exact
/// gradient in the weights. Terms and labels hold train rows only.
KtaObjective kta_objective(const std::vector<Matrix>& train_terms, const Matrix& train_labels,
                           const Vector& weights);

struct KtaFit {
  Aggregator aggregator;
  double initial_alignment = 0.0;
  double final_alignment = 0.0;
};

/// Gradient ascent on the alignment between the aggregated train rows and
/// `train_labels_onehot` (M x K, train rows only, in `train` order). The
/// returned weights are rescaled to unit L1 norm; alignment is invariant to
/// that scale.
KtaFit fit_kta(const Aggregator& a, const Matrix& x_t, const NodeIds& train,
               const Matrix& train_labels_onehot, const AlignmentConfig& cfg);

}  // namespace gbgnn
