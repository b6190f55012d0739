#include "gbgnn/mlp.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>

#include "gbgnn/error.hpp"
#include "gbgnn/loss.hpp"

namespace gbgnn {

using nlohmann::json;

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "sigmoid"; }

std::string to_string(OutputHead h) {
  switch (h) {
    case OutputHead::kIdentity: return "identity";
    case OutputHead::kArgmax: return "argmax";
    case OutputHead::kSoftmax: return "softmax";
  }
  return "identity";
}

std::string to_string(OptimizerKind o) {
  switch (o) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kMomentum: return "momentum";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kRmsprop: return "rmsprop";
  }
  return "adam";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw invalid_argument("unknown activation '" + s + "'");
}

OutputHead head_from_string(const std::string& s) {
  if (s == "identity") return OutputHead::kIdentity;
  if (s == "argmax") return OutputHead::kArgmax;
  if (s == "softmax") return OutputHead::kSoftmax;
  throw invalid_argument("unknown output head '" + s + "'");
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "momentum") return OptimizerKind::kMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "rmsprop") return OptimizerKind::kRmsprop;
  throw invalid_argument("unknown optimizer '" + s + "'");
}

MlpArchitecture MlpArchitecture::make(Index input, int hidden_layers, Index hidden_width,
                                      Index out, OutputHead head) {
  if (hidden_layers < 0) throw invalid_argument("MLP: negative hidden layer count");
  MlpArchitecture a;
  a.widths.push_back(input);
  for (int i = 0; i < hidden_layers; ++i) a.widths.push_back(hidden_width);
  a.widths.push_back(out);
  a.head = head;
  return a;
}

void MlpParams::check() const {
  if (arch.widths.size() < 2) throw invalid_argument("MLP: need at least one weight layer");
  if (weights.size() != arch.layers()) {
    throw invalid_argument("MLP: " + std::to_string(weights.size()) + " weight matrices for " +
                           std::to_string(arch.layers()) + " layers");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const Index rows = arch.widths[l] + (arch.has_bias(l) ? 1 : 0);
    if (weights[l].rows() != rows || weights[l].cols() != arch.widths[l + 1]) {
      throw invalid_argument("MLP: layer " + std::to_string(l) + " has shape " +
                             std::to_string(weights[l].rows()) + "x" +
                             std::to_string(weights[l].cols()) + ", expected " +
                             std::to_string(rows) + "x" + std::to_string(arch.widths[l + 1]));
    }
    if (!weights[l].allFinite()) {
      throw numeric_error("MLP: layer " + std::to_string(l) + " has non-finite weights");
    }
  }
}

std::uint64_t MlpParams::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& w : weights) {
    const Index r = w.rows();
    const Index c = w.cols();
    mix(&r, sizeof r);
    mix(&c, sizeof c);
    mix(w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
  }
  return h;
}

MlpParams zero_mlp(const MlpArchitecture& arch) {
  MlpParams p;
  p.arch = arch;
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    p.weights.push_back(
        Matrix::Zero(arch.widths[l] + (arch.has_bias(l) ? 1 : 0), arch.widths[l + 1]));
  }
  p.check();
  return p;
}

MlpParams init_mlp(const MlpArchitecture& arch, std::uint64_t seed) {
  MlpParams p = zero_mlp(arch);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(arch.widths[l], 1)));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Index i = 0; i < p.weights[l].size(); ++i) p.weights[l].data()[i] = unif(rng);
  }
  return p;
}

namespace {

Matrix augment(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

Matrix activate(Activation a, const Matrix& z) {
  if (a == Activation::kRelu) return z.cwiseMax(0.0);
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

Matrix activation_derivative(Activation a, const Matrix& z) {
  if (a == Activation::kRelu) {
    return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
  }
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 - s);
  });
}

}  // namespace

Matrix forward(const MlpParams& p, const Matrix& x, const ForwardOptions& options,
               ForwardCache* cache) {
  const auto& arch = p.arch;
  if (x.cols() != arch.widths.front()) {
    throw invalid_argument("MLP forward: input width " + std::to_string(x.cols()) +
                           " but the first layer expects " + std::to_string(arch.widths.front()));
  }
  if (p.weights.size() != arch.layers()) throw invalid_argument("MLP forward: malformed params");
  const bool use_dropout = options.train_mode && options.dropout_ratio > 0.0;
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution keep(1.0 - options.dropout_ratio);
  const double keep_scale = use_dropout ? 1.0 / (1.0 - options.dropout_ratio) : 1.0;

  if (cache != nullptr) {
    *cache = ForwardCache{};
    cache->params_fingerprint = p.fingerprint();
    cache->rows = x.rows();
    cache->input_cols = x.cols();
  }
  Matrix h = x;
  const std::size_t layers = arch.layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix input = arch.has_bias(l) ? augment(h) : h;
    Matrix z = input * p.weights[l];
    if (cache != nullptr) cache->layer_inputs.push_back(std::move(input));
    if (l + 1 == layers) {
      if (cache != nullptr) cache->pre_activations.push_back(z);
      return z;
    }
    h = activate(arch.activation, z);
    if (cache != nullptr) cache->pre_activations.push_back(std::move(z));
    if (use_dropout) {
      Matrix mask(h.rows(), h.cols());
      for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? keep_scale : 0.0;
      h = h.cwiseProduct(mask);
      if (cache != nullptr) cache->dropout_masks.push_back(std::move(mask));
    }
  }
  return h;  // unreachable for layers >= 1
}

MlpGradients backward(const MlpParams& p, const ForwardCache& cache, const Matrix& upstream,
                      bool want_input_grad) {
  const auto& arch = p.arch;
  const std::size_t layers = arch.layers();
  if (cache.params_fingerprint != p.fingerprint() || cache.layer_inputs.size() != layers) {
    throw invalid_argument("MLP backward: stale forward cache (parameters changed)");
  }
  if (upstream.rows() != cache.rows || upstream.cols() != arch.widths.back()) {
    throw invalid_argument("MLP backward: upstream gradient shape does not match the forward pass");
  }
  MlpGradients grads;
  grads.weights.resize(layers);
  Matrix delta = upstream;  // d/d(pre-activation of layer l)
  for (std::size_t li = layers; li-- > 0;) {
    grads.weights[li] = cache.layer_inputs[li].transpose() * delta;
    if (li == 0 && !want_input_grad) break;
    Matrix d_input = delta * p.weights[li].transpose();
    if (arch.has_bias(li)) d_input.conservativeResize(Eigen::NoChange, d_input.cols() - 1);
    if (li == 0) {
      grads.input = std::move(d_input);
      break;
    }
    if (!cache.dropout_masks.empty()) d_input = d_input.cwiseProduct(cache.dropout_masks[li - 1]);
    delta = d_input.cwiseProduct(activation_derivative(arch.activation, cache.pre_activations[li - 1]));
  }
  return grads;
}

Matrix apply_head(OutputHead head, const Matrix& raw) {
  switch (head) {
    case OutputHead::kIdentity: return raw;
    case OutputHead::kSoftmax: return softmax_rows(raw);
    case OutputHead::kArgmax: {
      Matrix out = Matrix::Zero(raw.rows(), raw.cols());
      for (Index r = 0; r < raw.rows(); ++r) out(r, argmax_row(raw, r)) = 1.0;
      return out;
    }
  }
  return raw;
}

std::vector<int> predict_classes(const MlpParams& p, const Matrix& x) {
  return argmax_rows(forward(p, x));
}

void TrainConfig::validate(std::size_t m) const {
  if (epochs < 1) throw invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size != 0 && (batch_size < 1 || static_cast<std::size_t>(batch_size) > m)) {
    throw invalid_argument("TrainConfig: batch size must lie in [1, " + std::to_string(m) + "]");
  }
  if (!(learning_rate > 0.0)) throw invalid_argument("TrainConfig: learning rate must be > 0");
  if (momentum < 0.0) throw invalid_argument("TrainConfig: momentum must be >= 0");
  if (weight_decay < 0.0) throw invalid_argument("TrainConfig: weight decay must be >= 0");
  if (l1_column_bound && !(*l1_column_bound > 0.0)) {
    throw invalid_argument("TrainConfig: L1 column bound must be > 0");
  }
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double momentum,
                     double weight_decay)
    : kind_(kind), lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {}

void Optimizer::ensure_state(const std::vector<Matrix>& params) {
  if (first_.size() == params.size()) return;
  first_.clear();
  second_.clear();
  for (const auto& p : params) {
    first_.push_back(Matrix::Zero(p.rows(), p.cols()));
    second_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Optimizer::step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
  ensure_state(params);
  ++t_;
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kRmsAlpha = 0.99;
  constexpr double kEps = 1e-8;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix g = grads[i];
    if (weight_decay_ > 0.0) g += weight_decay_ * params[i];
    switch (kind_) {
      case OptimizerKind::kSgd:
        params[i] -= lr_ * g;
        break;
      case OptimizerKind::kMomentum:
        first_[i] = momentum_ * first_[i] + g;
        params[i] -= lr_ * first_[i];
        break;
      case OptimizerKind::kAdam: {
        first_[i] = kBeta1 * first_[i] + (1.0 - kBeta1) * g;
        second_[i] = kBeta2 * second_[i] + (1.0 - kBeta2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        params[i].array() -= lr_ * (first_[i].array() / c1) /
                             ((second_[i].array() / c2).sqrt() + kEps);
        break;
      }
      case OptimizerKind::kRmsprop:
        second_[i] = kRmsAlpha * second_[i] + (1.0 - kRmsAlpha) * g.cwiseAbs2();
        params[i].array() -= lr_ * g.array() / (second_[i].array().sqrt() + kEps);
        break;
    }
  }
}

void Optimizer::step(Vector& params, const Vector& grads) {
  std::vector<Matrix> p{Matrix(params)};
  std::vector<Matrix> g{Matrix(grads)};
  step(p, g);
  params = p.front().col(0);
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Shared minibatch loop. `batch_loss` fills the upstream gradient for the
// batch output and returns the batch loss.
template <class BatchLoss>
MlpParams train_loop(const MlpParams& init, const TrainConfig& cfg, const Matrix& x,
                     const NodeIds& train, BatchLoss&& batch_loss) {
  cfg.validate(train.size());
  init.check();
  MlpParams p = init;
  if (cfg.l1_column_bound) p = project_l1_columns(p, *cfg.l1_column_bound);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  const std::size_t batch =
      cfg.batch_size == 0 ? train.size() : static_cast<std::size_t>(cfg.batch_size);
  NodeIds order = train;
  std::mt19937_64 rng(cfg.seed);
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  ForwardCache cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < order.size()) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
      const std::size_t end = std::min(order.size(), start + batch);
      const NodeIds ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix xb = gather_rows(x, ids);
      ForwardOptions fo;
      fo.train_mode = true;
      fo.dropout_ratio = cfg.dropout ? 0.5 : 0.0;
      fo.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), b);
      const Matrix out = forward(p, xb, fo, &cache);
      Matrix upstream;
      const double loss = batch_loss(ids, out, upstream);
      if (!std::isfinite(loss) || !upstream.allFinite()) {
        throw numeric_error("training diverged at epoch " + std::to_string(epoch) +
                            "; last finite loss " + std::to_string(last_finite));
      }
      last_finite = loss;
      const MlpGradients g = backward(p, cache, upstream);
      opt.step(p.weights, g.weights);
      if (cfg.l1_column_bound) p = project_l1_columns(p, *cfg.l1_column_bound);
      for (const auto& w : p.weights) {
        if (!w.allFinite()) {
          throw numeric_error("training diverged at epoch " + std::to_string(epoch) +
                              "; last finite loss " + std::to_string(last_finite));
        }
      }
    }
  }
  return p;
}

}  // namespace

RegressionFit fit_to_gradient(const MlpParams& init, const TrainConfig& cfg, const Matrix& x,
                              const Vector& target, const NodeIds& train) {
  if (init.arch.widths.back() != 1) {
    throw invalid_argument("fit_to_gradient: the network must have a single output");
  }
  if (target.size() != x.rows()) throw invalid_argument("fit_to_gradient: target length != N");
  std::vector<char> is_train(static_cast<std::size_t>(x.rows()), 0);
  for (NodeId n : train) is_train[static_cast<std::size_t>(n)] = 1;
  for (Index n = 0; n < target.size(); ++n) {
    if (is_train[static_cast<std::size_t>(n)] == 0 && target[n] != 0.0) {
      throw invalid_argument("fit_to_gradient: target is nonzero off the train nodes (node " +
                             std::to_string(n) + ")");
    }
  }
  RegressionFit fit;
  fit.params = train_loop(init, cfg, x, train,
                          [&](const NodeIds& ids, const Matrix& out, Matrix& upstream) {
                            const auto nb = static_cast<double>(ids.size());
                            upstream.resize(out.rows(), 1);
                            double loss = 0.0;
                            for (std::size_t i = 0; i < ids.size(); ++i) {
                              const double r = out(static_cast<Index>(i), 0) - target[ids[i]];
                              loss += r * r;
                              upstream(static_cast<Index>(i), 0) = 2.0 * r / nb;
                            }
                            return loss / nb;
                          });
  const Matrix out = forward(fit.params, gather_rows(x, train));
  double mse = 0.0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const double r = out(static_cast<Index>(i), 0) - target[train[i]];
    mse += r * r;
  }
  fit.train_mse = mse / static_cast<double>(train.size());
  return fit;
}

double weighted_error(const std::vector<int>& predicted, const std::vector<int>& labels,
                      const Vector& sample_weights, const NodeIds& ids) {
  double wrong = 0.0;
  double total = 0.0;
  for (NodeId n : ids) {
    const auto i = static_cast<std::size_t>(n);
    total += sample_weights[n];
    if (predicted[i] != labels[i]) wrong += sample_weights[n];
  }
  if (!(total > 0.0)) throw invalid_argument("weighted_error: zero total weight");
  return wrong / total;
}

ClassifierFit fit_classifier(const MlpParams& init, const TrainConfig& cfg, const Matrix& x,
                             const std::vector<int>& labels, const Vector& sample_weights,
                             const NodeIds& train) {
  if (sample_weights.size() != x.rows()) {
    throw invalid_argument("fit_classifier: one sample weight per node is required");
  }
  const Index k = init.arch.widths.back();
  double total = 0.0;
  for (NodeId n : train) {
    if (sample_weights[n] < 0.0) throw invalid_argument("fit_classifier: negative sample weight");
    if (labels[static_cast<std::size_t>(n)] < 0 || labels[static_cast<std::size_t>(n)] >= k) {
      throw invalid_argument("fit_classifier: label outside the output width");
    }
    total += sample_weights[n];
  }
  if (!(total > 0.0)) throw invalid_argument("fit_classifier: all sample weights are zero");
  const double m = static_cast<double>(train.size());

  ClassifierFit fit;
  fit.params = train_loop(init, cfg, x, train,
                          [&](const NodeIds& ids, const Matrix& out, Matrix& upstream) {
                            // Unbiased estimate of sum_n w_n CE_n / sum_n w_n.
                            const double scale = m / (static_cast<double>(ids.size()) * total);
                            const Matrix prob = softmax_rows(out);
                            upstream = prob;
                            double loss = 0.0;
                            for (std::size_t i = 0; i < ids.size(); ++i) {
                              const auto r = static_cast<Index>(i);
                              const int y = labels[static_cast<std::size_t>(ids[i])];
                              const double w = sample_weights[ids[i]] * scale;
                              loss += w * -std::log(std::max(prob(r, y), 1e-300));
                              upstream(r, y) -= 1.0;
                              upstream.row(r) *= w;
                            }
                            return loss;
                          });
  fit.weighted_error = weighted_error(predict_classes(fit.params, x), labels, sample_weights, train);
  return fit;
}

MlpParams project_l1_columns(const MlpParams& p, double bound) {
  if (!(bound > 0.0)) throw invalid_argument("project_l1_columns: bound must be > 0");
  MlpParams out = p;
  for (auto& w : out.weights) {
    for (Index c = 0; c < w.cols(); ++c) {
      const double l1 = w.col(c).lpNorm<1>();
      if (l1 > bound) w.col(c) *= bound / l1;
    }
  }
  return out;
}

double max_column_l1(const MlpParams& p) {
  double best = 0.0;
  for (const auto& w : p.weights) {
    for (Index c = 0; c < w.cols(); ++c) best = std::max(best, w.col(c).lpNorm<1>());
  }
  return best;
}

json to_json(const MlpParams& p) {
  json layers = json::array();
  for (const auto& w : p.weights) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(w.size()));
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) data.push_back(w(r, c));
    }
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"data", std::move(data)}});
  }
  return {{"widths", p.arch.widths},
          {"activation", to_string(p.arch.activation)},
          {"head", to_string(p.arch.head)},
          {"bias_every_layer", p.arch.bias_every_layer},
          {"layers", std::move(layers)}};
}

MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  try {
    p.arch.widths = j.at("widths").get<std::vector<Index>>();
    p.arch.activation = activation_from_string(j.at("activation").get<std::string>());
    p.arch.head = head_from_string(j.at("head").get<std::string>());
    p.arch.bias_every_layer = j.at("bias_every_layer").get<bool>();
    for (const auto& layer : j.at("layers")) {
      const auto rows = layer.at("rows").get<Index>();
      const auto cols = layer.at("cols").get<Index>();
      const auto data = layer.at("data").get<std::vector<double>>();
      if (static_cast<Index>(data.size()) != rows * cols) {
        throw data_error("MLP JSON: layer data length does not match its shape");
      }
      Matrix w(rows, cols);
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) w(r, c) = data[static_cast<std::size_t>(r * cols + c)];
      }
      p.weights.push_back(std::move(w));
    }
  } catch (const json::exception& e) {
    throw data_error(std::string("MLP JSON: ") + e.what());
  }
  p.check();
  return p;
}

}  // namespace gbgnn
