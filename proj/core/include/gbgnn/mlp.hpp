#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gbgnn/types.hpp"

namespace gbgnn {

enum class Activation { kRelu, kSigmoid };
enum class OutputHead { kIdentity, kArgmax, kSoftmax };
enum class OptimizerKind { kSgd, kMomentum, kAdam, kRmsprop };

std::string to_string(Activation a);
std::string to_string(OutputHead h);
std::string to_string(OptimizerKind o);
Activation activation_from_string(const std::string& s);
OutputHead head_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);

/// Layer widths C_1 .. C_{L+1}; C_1 is the raw input width (the constant-1
/// bias column is appended internally). With `bias_every_layer` false only
/// the input carries the constant column, matching x -> (x, 1).
struct MlpArchitecture {
  std::vector<Index> widths;
  Activation activation = Activation::kRelu;
  OutputHead head = OutputHead::kIdentity;
  bool bias_every_layer = true;

  /// Number of weight layers L.
  std::size_t layers() const noexcept { return widths.empty() ? 0 : widths.size() - 1; }
  bool has_bias(std::size_t layer) const noexcept { return layer == 0 || bias_every_layer; }

  /// Input width C, `hidden_layers` hidden layers of `hidden_width`, output
  /// width `out`.
  static MlpArchitecture make(Index input, int hidden_layers, Index hidden_width, Index out,
                              OutputHead head = OutputHead::kIdentity);
};

/// Weight matrices W^(l) of shape (C_l + bias) x C_{l+1}.
struct MlpParams {
  MlpArchitecture arch;
  std::vector<Matrix> weights;

  /// Throws if shapes do not chain or weights are non-finite.
  void check() const;
  /// Order-sensitive hash of every weight bit pattern.
  std::uint64_t fingerprint() const;
};

/// Uniform in ±1/sqrt(fan_in) per layer, fan_in = C_l.
MlpParams init_mlp(const MlpArchitecture& arch, std::uint64_t seed);
MlpParams zero_mlp(const MlpArchitecture& arch);

struct ForwardOptions {
  bool train_mode = false;
  double dropout_ratio = 0.0;  // applied to hidden activations in train mode
  std::uint64_t seed = 0;
};

/// Intermediate values needed by backward().
struct ForwardCache {
  std::vector<Matrix> layer_inputs;  // bias-augmented inputs to each layer
  std::vector<Matrix> pre_activations;
  std::vector<Matrix> dropout_masks;  // empty when dropout was off
  std::uint64_t params_fingerprint = 0;
  Index rows = 0;
  Index input_cols = 0;
};

/// Raw network output (before the head), one row per input row.
Matrix forward(const MlpParams& p, const Matrix& x, const ForwardOptions& options = {},
               ForwardCache* cache = nullptr);

struct MlpGradients {
  std::vector<Matrix> weights;
  Matrix input;  // d/dx (raw input columns), filled when requested
};

/// Exact gradients of sum(upstream .* forward(x)). ReLU'(0) = 0. Throws if
/// the cache was produced for different parameters or a different batch.
MlpGradients backward(const MlpParams& p, const ForwardCache& cache, const Matrix& upstream,
                      bool want_input_grad = false);

/// Applies the configured head: identity, softmax, or one-hot of the argmax.
Matrix apply_head(OutputHead head, const Matrix& raw);

/// Class ids by argmax of the raw output (lowest index on ties).
std::vector<int> predict_classes(const MlpParams& p, const Matrix& x);

struct TrainConfig {
  int epochs = 100;
  Index batch_size = 0;  // 0 means full batch (B = M)
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool dropout = false;  // ratio 0.5 when on
  std::uint64_t seed = 0;
  /// Theory mode: radial projection of every column onto the L1 ball after
  /// each step.
  std::optional<double> l1_column_bound;

  /// Throws on epochs < 1, B outside [1, m] (unless 0), non-positive rates.
  void validate(std::size_t m) const;
};

/// First-order optimizer state for a list of parameter matrices.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double momentum, double weight_decay);

  /// Updates `params` in place; weight decay is added to the gradient.
  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads);
  /// Same, for a flat parameter vector.
  void step(Vector& params, const Vector& grads);

 private:
  void ensure_state(const std::vector<Matrix>& params);

  OptimizerKind kind_;
  double lr_;
  double momentum_;
  double weight_decay_;
  long long t_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

struct RegressionFit {
  MlpParams params;
  double train_mse = 0.0;
};

/// Minibatch minimization of the mean squared error between the network's
/// single output column and `target` over `train`. `target` must vanish off
/// the train nodes. Throws a numeric error carrying the last finite loss if
/// the loss diverges.
RegressionFit fit_to_gradient(const MlpParams& init, const TrainConfig& cfg, const Matrix& x,
                              const Vector& target, const NodeIds& train);

struct ClassifierFit {
  MlpParams params;
  double weighted_error = 0.0;
};

/// Minimizes the weight-scaled softmax cross-entropy over `train`.
/// `sample_weights` has one entry per node (N); only train entries are used.
ClassifierFit fit_classifier(const MlpParams& init, const TrainConfig& cfg, const Matrix& x,
                             const std::vector<int>& labels, const Vector& sample_weights,
                             const NodeIds& train);

/// Weighted 0-1 error of argmax predictions over `ids`.
double weighted_error(const std::vector<int>& predicted, const std::vector<int>& labels,
                      const Vector& sample_weights, const NodeIds& ids);

/// Rescales every weight column whose L1 norm exceeds `bound` onto the
/// sphere of radius `bound`; other columns are untouched.
MlpParams project_l1_columns(const MlpParams& p, double bound);

/// Largest column L1 norm over all layers.
double max_column_l1(const MlpParams& p);

nlohmann::json to_json(const MlpParams& p);
MlpParams mlp_from_json(const nlohmann::json& j);

}  // namespace gbgnn
