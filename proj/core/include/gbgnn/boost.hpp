#pragma once

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gbgnn/aggregate.hpp"
#include "gbgnn/data.hpp"
#include "gbgnn/loss.hpp"
#include "gbgnn/mlp.hpp"

namespace gbgnn {

// ---------------------------------------------------------------------------
// Weak learning condition

struct WlcParams {
  double alpha = 1.0;
  double beta = 0.0;

  /// (alpha^2 - beta^2) / alpha^2.
  double gamma() const { return (alpha * alpha - beta * beta) / (alpha * alpha); }
};

enum class RPolicy { kMidpoint, kTightest };
enum class RootChoice { kMinus, kPlus };

/// ||z - alpha g|| <= beta ||g||. Throws on g = 0.
bool wlc_check(const Vector& z, const Vector& g, const WlcParams& p);

struct WlcFit {
  std::optional<WlcParams> params;  // empty: no (alpha, beta) exists
  double cos_theta = 0.0;
  double r = 0.0;
};

/// Fits (alpha, beta) = (C, rC) on the boundary of the condition. Empty iff
/// <z, g> <= 0. Throws on g = 0.
WlcFit wlc_fit(const Vector& z, const Vector& g, RPolicy policy = RPolicy::kMidpoint,
               RootChoice root = RootChoice::kMinus);

struct WeightedErrorForm {
  double error = 0.0;
  double delta = 0.0;  // largest delta with error <= (1 - delta) / 2
  bool ok = false;     // delta > 0
};

/// AdaBoost-style form for z in {-1, +1}^N with weights |g_n| / ||g||_1.
WeightedErrorForm weighted_error_form(const Vector& z, const Vector& g);

// ---------------------------------------------------------------------------
// Models

enum class BoostMode { kFunctional, kSamme, kSammeR };
std::string to_string(BoostMode m);
BoostMode boost_mode_from_string(const std::string& s);

enum class PropagationKind { kNormalized, kAugmented };
std::string to_string(PropagationKind k);
PropagationKind propagation_from_string(const std::string& s);
PropagationMatrix make_propagation(PropagationKind k, const SparseGraph& g);

/// Iteration t: optional aggregator g^(t) (absent for t = 1), transformation
/// b^(t) and its step size (eta for functional GB, lambda for SAMME).
struct Stage {
  std::optional<Aggregator> aggregator;
  MlpParams learner;
  double weight = 1.0;
};

struct EnsembleModel {
  BoostMode mode = BoostMode::kFunctional;
  int num_classes = 2;
  PropagationKind propagation = PropagationKind::kAugmented;
  std::vector<Stage> stages;
  /// 1-based selected iterate; predictions use stages [1, t_star].
  std::size_t t_star = 0;
  double clip = kDefaultClip;
};

/// Learner output columns for a node-score matrix: the functional mode
/// produces one column, the SAMME modes K.
struct Replay {
  std::vector<Matrix> cumulative;  // score matrix after each stage
  std::vector<double> representation_frobenius;  // ||X^(t)||_F
};

/// Recomputes every stage from the features. Scores: functional Y^(t)
/// (N x 1), SAMME sum_s lambda_s onehot(h_s), SAMME.R summed contributions.
Replay replay(const EnsembleModel& model, const Matrix& features);

struct Prediction {
  Matrix scores;  // N x 1 (functional) or N x K
  Labels classes;
};

/// Uses stages up to t_star. Functional: class 1 iff Y > 0. SAMME modes:
/// argmax with lowest-index tie-break.
Prediction predict(const EnsembleModel& model, const Matrix& features);

/// SAMME.R per-node contribution (K - 1)(log p_k - mean_j log p_j) with p
/// clipped below at `clip`.
Matrix samme_r_contribution(const Matrix& probabilities, double clip);

/// SAMME model weight log((1 - e)/e) + log(K - 1), with e clamped to
/// [1e-10, 1 - 1e-10].
double samme_lambda(double error, int k);

nlohmann::json to_json(const EnsembleModel& m);
/// The graph is needed to rebuild the propagation operator.
EnsembleModel model_from_json(const nlohmann::json& j, const SparseGraph& graph);
/// model.json plus learners/NNN.json.
void save_model(const EnsembleModel& m, const std::filesystem::path& dir);
EnsembleModel load_model(const std::filesystem::path& model_json, const SparseGraph& graph);

// ---------------------------------------------------------------------------
// Trace

struct TraceRow {
  int t = 0;
  double train_loss = 0.0;
  double train_err = 0.0;
  double test_err = 0.0;
  double cos_theta = 0.0;  // NaN when there is no condition to check (t = 1)
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double grad_l1 = 0.0;
  bool wlc_pass = false;
};

inline constexpr const char* kTraceHeader =
    "t,train_loss,train_err,test_err,cos_theta,alpha,beta,gamma,grad_l1,wlc_pass";

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);
/// Throws a data error on a header or column-count mismatch.
std::vector<TraceRow> read_trace_csv(std::istream& in);

// ---------------------------------------------------------------------------
// Drivers

/// Architecture and training of the weak learners and aggregators.
struct ModelSpec {
  AggregatorKind aggregator = AggregatorKind::kFixed;
  PropagationKind propagation = PropagationKind::kAugmented;
  double rho = 0.5;
  int kta_degree = kDefaultKtaDegree;
  AlignmentConfig alignment;
  int hidden_layers = 1;
  Index hidden_width = 64;
  Activation activation = Activation::kRelu;
  bool bias_every_layer = true;
  TrainConfig train;
};

enum class WlcFallback { kStop, kContinueFlagged };

struct FunctionalConfig {
  int T = 10;
  double eta1 = 1.0;
  RPolicy r_policy = RPolicy::kMidpoint;
  RootChoice root = RootChoice::kMinus;
  WlcFallback fallback = WlcFallback::kContinueFlagged;
  double fallback_alpha = 1.0;
  double delta = 0.0;
  /// Restrict t* to [max(T - 1, 1)], the original index set; otherwise t*
  /// ranges over every recorded iterate.
  bool strict_t_star = false;
  double clip = kDefaultClip;
};

struct BoostResult {
  EnsembleModel model;
  std::vector<TraceRow> trace;
  bool flagged = false;
  std::string flag_reason;
  /// L(Y^(1)) for the optimization bound (functional mode).
  double initial_surrogate = 0.0;
};

/// Functional gradient boosting for binary labels (iterates built by the
/// t = 2..T+1 loop). Stage t >= 2 fits b^(t) to -M grad L(Y^(t-1)), checks
/// the condition on (1/M) f^(t)(X) and steps with eta = 4 / alpha_t.
BoostResult run_functional_gb(const NodeDataset& data, const ModelSpec& spec,
                              const FunctionalConfig& cfg);

struct SammeConfig {
  int T = 100;
  double clip = kDefaultClip;
};

/// SAMME with hard (argmax) weak classifiers. A learner with weighted error
/// >= 1 - 1/K is retrained once with a fresh seed; if it is still rejected
/// the ensemble is truncated and flagged.
BoostResult run_samme(const NodeDataset& data, const ModelSpec& spec, const SammeConfig& cfg);

/// SAMME.R with softmax weak learners.
BoostResult run_samme_r(const NodeDataset& data, const ModelSpec& spec, const SammeConfig& cfg);

/// SAMME reweighting: w_n *= exp(lambda) on misclassified train nodes, then
/// renormalization over train nodes. Entries off train stay zero.
Vector samme_update_weights(const Vector& w, const Labels& predicted, const Labels& labels,
                            double lambda, const NodeIds& train);

/// SAMME.R reweighting: w_n *= exp(-(1/K) y_code_n . h_n), then
/// renormalization over train nodes.
Vector samme_r_update_weights(const Vector& w, const Matrix& contribution, const Labels& labels,
                              const NodeIds& train);

/// Multiclass exponential loss exp(-(1/K) y_code . f) averaged over `ids`,
/// with y_code = (1, -1/(K-1), ...). f = (K-1) * votes for SAMME.
double multiclass_exp_loss(const Matrix& f, const Labels& labels, const NodeIds& ids);

// ---------------------------------------------------------------------------
// Fine-tuning

/// End-to-end objective over the stacked model: every MLP weight and every
/// KTA weight is a parameter; heads are softened (softmax) for SAMME.
class FineTuneProblem {
 public:
  FineTuneProblem(const EnsembleModel& model, const Matrix& features, const Labels& labels,
                  NodeIds train);

  Vector parameters() const;
  void set_parameters(const Vector& theta);
  /// Mean train cross-entropy (sigmoid for functional, softmax otherwise) of
  /// the softened model; fills the exact gradient when `grad` is given.
  double loss(Vector* grad = nullptr) const;
  const EnsembleModel& model() const noexcept { return model_; }

 private:
  bool has_kta() const;

  EnsembleModel model_;
  const Matrix* features_;
  Labels labels_;
  NodeIds train_;
  std::vector<Matrix> fixed_rows_;  // train rows of X^(t) when no stage is trainable
};

struct FineTuneResult {
  EnsembleModel model;
  double train_err_before = 0.0;
  double train_err_after = 0.0;
  double val_err_before = 0.0;
  double val_err_after = 0.0;
  bool flagged = false;
};

/// Full-batch first-order training of FineTuneProblem with `cfg` (epochs,
/// optimizer, learning rate, weight decay). Divergence returns the original
/// model, flagged.
FineTuneResult fine_tune(const EnsembleModel& model, const NodeDataset& data,
                         const TrainConfig& cfg);

}  // namespace gbgnn
