#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gbgnn/boost.hpp"
#include "gbgnn/graph.hpp"

namespace gbgnn {

// ---------------------------------------------------------------------------
// Optimization bound

struct OptimizationBound {
  double value = 0.0;      // (1 + e^delta) L(Y^(1)) / (2 M Gamma_T)
  double gamma_sum = 0.0;  // Gamma_T
  /// Same formula with every gamma replaced by their mean, for T' = 1..T:
  /// the O(1/T) reference shape.
  std::vector<double> reference;
};

/// Throws when Gamma_T <= 0, on negative gammas, or when m = 0.
OptimizationBound optimization_bound(double initial_loss, std::size_t m,
                                     const std::vector<double>& gammas, double delta);

// ---------------------------------------------------------------------------
// Transductive Rademacher complexity

struct ComplexityConstants {
  int layers = 1;                // L
  double b_tilde = 1.0;          // column L1 bound of every learner layer
  std::vector<double> c_tilde;   // C̃^(s), s = 2..t (empty for t = 1)
  std::size_t m = 1;
  std::size_t u = 1;

  /// 2 sqrt(2) (2 B̃)^(L-1) prod_s C̃^(s). Empty product and zero exponent
  /// are both 1.
  double d() const;
  /// MU / (M + U)^2.
  double p0() const;
  /// 1/M + 1/U.
  double q() const;
  void validate() const;
};

/// D^(t) ||P^(t) X||_F / sqrt(MU).
double rademacher_bound(const ComplexityConstants& c, double px_frobenius);

struct GeneralizationBound {
  double train_term = 0.0;
  double complexity = 0.0;  // sum of eta^(t) R(F^(t))
  double c0_term = 0.0;     // c0 Q sqrt(M ∧ U)
  double confidence = 0.0;  // sqrt((S Q / 2) log(1/delta'))
  double c0 = 1.0;
  double delta_prime = 0.05;
  double total() const { return train_term + complexity + c0_term + confidence; }
};

/// Four-term bound. c0 = 0 is accepted so the remaining terms can be read
/// off in isolation.
GeneralizationBound generalization_bound(double train_err, const std::vector<double>& rad_terms,
                                         std::size_t m, std::size_t u, double c0 = 1.0,
                                         double delta_prime = 0.05);

struct McOptions {
  std::optional<double> p;  // defaults to p0
  std::size_t samples = 20000;
  std::uint64_t seed = 0;
  /// sup |<sigma, v>| instead of sup <sigma, v>.
  bool symmetrized = false;
  /// Worker threads. Draws come in fixed blocks seeded from (seed, block),
  /// so the estimate does not depend on this.
  unsigned threads = 1;
};

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline constexpr std::size_t kMcBlock = 1024;

/// Q E sup_{v in V} <sigma, v> with sigma_i = +1 or -1 with probability p
/// each, 0 otherwise. Throws on an empty set or mismatched lengths.
McEstimate mc_transductive_rademacher(const std::vector<Vector>& set, std::size_t m,
                                      std::size_t u, const McOptions& opts = {});

/// Implicit set: `sup` returns sup_{v in V} <sigma, v> (or its absolute
/// variant) for one draw of length n. Must be thread-safe when threads > 1.
McEstimate mc_transductive_rademacher(Index n, const std::function<double(const Vector&)>& sup,
                                      std::size_t m, std::size_t u, const McOptions& opts = {});

/// (alpha^2 - beta^2) / alpha. Throws unless alpha > beta >= 0.
double wlc_complexity_lower_bound(double alpha, double beta);

// ---------------------------------------------------------------------------
// Spectral smoothing

struct SpectralRow {
  int t = 0;
  double frob_direct = 0.0;    // ||P^t X||_F by repeated products
  double frob_spectral = 0.0;  // sqrt(sum_n sum_c lambda_n^(2t) a_nc^2)
  double cos_xi1_max = 0.0;    // max_c |cos(P^t X_c, xi_1)|; NaN if all columns vanish
  double rank1_dist = 0.0;     // ||(I - xi_1 xi_1^T) P^t X||_F
};

struct SpectralTrajectory {
  std::vector<SpectralRow> rows;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  /// Largest |frob_direct - frob_spectral| / max(frob_direct, tiny).
  double max_relative_gap = 0.0;
};

inline constexpr const char* kSpectralHeader = "t,frob_direct,frob_spectral,cos_xi1_max,rank1_dist";

/// Requires a symmetric P; throws when N exceeds `cap` or the two Frobenius
/// computations disagree by more than 1e-6 relative.
SpectralTrajectory smoothing_report(const PropagationMatrix& p, const Matrix& x, int t_max,
                                    Index cap = kDefaultEigenCap);
void write_spectral_csv(std::ostream& out, const SpectralTrajectory& s);

// ---------------------------------------------------------------------------
// Report for a trained model

struct GeometricTest {
  std::vector<double> sequence;  // alpha_t^-1 D^(t) ||P^(t)||_op
  std::vector<double> ratios;
  double max_ratio = 0.0;
  bool geometric = false;  // at least two ratios, all below 1
};

/// Finite-sequence ratio test; it makes no asymptotic claim.
GeometricTest geometric_ratio_test(const std::vector<double>& sequence);

struct StageComplexity {
  int t = 0;
  double eta = 0.0;
  double alpha = 0.0;  // NaN when the stage has no condition fit
  double b_tilde = 0.0;
  double d = 0.0;
  double px_frobenius = 0.0;
  double op_norm = 0.0;  // ||P^(t)||_op, NaN when not computed
  double rademacher = 0.0;
};

struct OptimizationSection {
  double initial_loss = 0.0;
  double realized_train_err = 0.0;
  OptimizationBound bound;
  bool holds = false;
  /// False when some iteration failed the condition: the inequality is then
  /// reported but not implied.
  bool guaranteed = false;
};

struct TheoryOptions {
  double c0 = 1.0;
  double delta_prime = 0.05;
  double delta = 0.0;  // margin used by the training-error term
  int spectral_t_max = 32;
  Index eigen_cap = kDefaultEigenCap;
  bool op_norms = true;
};

struct TheoryReport {
  std::string mode;
  std::size_t m = 0;
  std::size_t u = 0;
  std::vector<double> gammas;  // per stage t >= 2; 0 for failed iterations
  double gamma_sum = 0.0;
  std::optional<OptimizationSection> optimization;  // functional mode only
  std::vector<StageComplexity> stages;
  GeneralizationBound generalization;
  double realized_test_err = 0.0;
  GeometricTest geometric;
  /// False when the model leaves the analysed class (biases past the input
  /// layer, input injection); the numbers are then indicative only.
  bool exact_class = true;
  std::vector<std::string> notes;
  std::optional<SpectralTrajectory> spectral;
  bool spectral_skipped = false;
};

/// `trace` may be empty, in which case no gamma-dependent section is built.
TheoryReport theory_report(const EnsembleModel& model, const NodeDataset& data,
                           const std::vector<TraceRow>& trace, const TheoryOptions& opts = {});

nlohmann::json to_json(const TheoryReport& r);

}  // namespace gbgnn
