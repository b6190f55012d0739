#include "gbgnn/boost.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "gbgnn/error.hpp"

namespace gbgnn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_nonzero(const Vector& g, const char* who) {
  if (g.squaredNorm() == 0.0) throw invalid_argument(std::string(who) + ": g must be nonzero");
}

}  // namespace

// ---------------------------------------------------------------------------
// Weak learning condition

bool wlc_check(const Vector& z, const Vector& g, const WlcParams& p) {
  require_nonzero(g, "wlc_check");
  if (z.size() != g.size()) throw invalid_argument("wlc_check: length mismatch");
  return (z - p.alpha * g).norm() <= p.beta * g.norm();
}

WlcFit wlc_fit(const Vector& z, const Vector& g, RPolicy policy, RootChoice root) {
  require_nonzero(g, "wlc_fit");
  if (z.size() != g.size()) throw invalid_argument("wlc_fit: length mismatch");
  const double zg = z.dot(g);
  const double zz = z.squaredNorm();
  const double gg = g.squaredNorm();
  WlcFit fit;
  fit.cos_theta = zz > 0.0 ? zg / std::sqrt(zz * gg) : 0.0;
  fit.r = kNaN;
  if (!(zg > 0.0)) return fit;

  const double cos = std::min(1.0, fit.cos_theta);
  const double sin2 = std::max(0.0, 1.0 - cos * cos);
  double r = 0.0;
  if (policy == RPolicy::kMidpoint) {
    r = 0.5 * (1.0 + sin2);
  } else {
    // A real root needs r >= sin(theta) (discriminant r^2 >= sin^2), not sin^2(theta).
    r = std::min(std::sqrt(sin2) + 1e-9, std::nextafter(1.0, 0.0));
  }
  const double one_minus_r2 = 1.0 - r * r;
  const double disc = std::max(0.0, zg * zg - one_minus_r2 * zz * gg);
  const double c = root == RootChoice::kMinus ? zz / (zg + std::sqrt(disc))
                                              : (zg + std::sqrt(disc)) / (one_minus_r2 * gg);
  fit.r = r;
  fit.params = WlcParams{c, r * c};
  return fit;
}

WeightedErrorForm weighted_error_form(const Vector& z, const Vector& g) {
  require_nonzero(g, "weighted_error_form");
  if (z.size() != g.size()) throw invalid_argument("weighted_error_form: length mismatch");
  double wrong = 0.0;
  double total = 0.0;
  for (Index n = 0; n < z.size(); ++n) {
    if (z[n] != 1.0 && z[n] != -1.0) {
      throw invalid_argument("weighted_error_form: z must be in {-1, +1}");
    }
    const double a = std::abs(g[n]);
    total += a;
    const double sign = g[n] > 0.0 ? 1.0 : (g[n] < 0.0 ? -1.0 : 0.0);
    if (sign != z[n]) wrong += a;
  }
  WeightedErrorForm out;
  out.error = wrong / total;
  out.ok = out.error < 0.5;
  out.delta = out.ok ? std::min(1.0, 1.0 - 2.0 * out.error) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Names

std::string to_string(BoostMode m) {
  switch (m) {
    case BoostMode::kFunctional: return "functional";
    case BoostMode::kSamme: return "samme";
    case BoostMode::kSammeR: return "samme_r";
  }
  return "functional";
}

BoostMode boost_mode_from_string(const std::string& s) {
  if (s == "functional") return BoostMode::kFunctional;
  if (s == "samme") return BoostMode::kSamme;
  if (s == "samme_r") return BoostMode::kSammeR;
  throw invalid_argument("unknown boosting mode '" + s + "'");
}

std::string to_string(PropagationKind k) {
  return k == PropagationKind::kNormalized ? "normalized" : "augmented";
}

PropagationKind propagation_from_string(const std::string& s) {
  if (s == "normalized") return PropagationKind::kNormalized;
  if (s == "augmented") return PropagationKind::kAugmented;
  throw invalid_argument("unknown aggregation base '" + s + "'");
}

PropagationMatrix make_propagation(PropagationKind k, const SparseGraph& g) {
  return k == PropagationKind::kNormalized ? normalized_adjacency(g) : augmented_adjacency(g);
}

// ---------------------------------------------------------------------------
// Scores and replay

Matrix samme_r_contribution(const Matrix& probabilities, double clip) {
  if (!probabilities.allFinite()) throw numeric_error("SAMME.R: non-finite class probabilities");
  const auto k = static_cast<double>(probabilities.cols());
  const Matrix logp = probabilities.cwiseMax(clip).array().log().matrix();
  Matrix out = logp;
  for (Index r = 0; r < out.rows(); ++r) out.row(r).array() -= logp.row(r).mean();
  return (k - 1.0) * out;
}

double samme_lambda(double error, int k) {
  if (k < 2) throw invalid_argument("samme_lambda: K must be >= 2");
  const double e = std::clamp(error, 1e-10, 1.0 - 1e-10);
  return std::log((1.0 - e) / e) + std::log(static_cast<double>(k - 1));
}

namespace {

// Adds one stage's learner output to the running scores.
void accumulate(BoostMode mode, const Stage& stage, const Matrix& out, double clip, Matrix& scores) {
  switch (mode) {
    case BoostMode::kFunctional:
      scores.col(0) += stage.weight * out.col(0);
      return;
    case BoostMode::kSamme:
      if (stage.learner.arch.head == OutputHead::kSoftmax) {
        scores += stage.weight * softmax_rows(out);
      } else {
        for (Index n = 0; n < out.rows(); ++n) scores(n, argmax_row(out, n)) += stage.weight;
      }
      return;
    case BoostMode::kSammeR:
      scores += stage.weight * samme_r_contribution(softmax_rows(out), clip);
      return;
  }
}

Index score_columns(const EnsembleModel& m) {
  return m.mode == BoostMode::kFunctional ? 1 : m.num_classes;
}

Labels classes_from_scores(BoostMode mode, const Matrix& scores) {
  if (mode != BoostMode::kFunctional) return argmax_rows(scores);
  Labels out(static_cast<std::size_t>(scores.rows()));
  for (Index n = 0; n < scores.rows(); ++n) out[static_cast<std::size_t>(n)] = scores(n, 0) > 0.0 ? 1 : 0;
  return out;
}

}  // namespace

Replay replay(const EnsembleModel& model, const Matrix& features) {
  Replay r;
  Matrix scores = Matrix::Zero(features.rows(), score_columns(model));
  Matrix x = features;
  for (const Stage& stage : model.stages) {
    if (stage.aggregator) x = stage.aggregator->apply(x, &features);
    r.representation_frobenius.push_back(x.norm());
    accumulate(model.mode, stage, forward(stage.learner, x), model.clip, scores);
    r.cumulative.push_back(scores);
  }
  return r;
}

Prediction predict(const EnsembleModel& model, const Matrix& features) {
  if (model.t_star > model.stages.size()) throw invalid_argument("predict: t* outside the history");
  Prediction p;
  p.scores = Matrix::Zero(features.rows(), score_columns(model));
  Matrix x = features;
  for (std::size_t s = 0; s < model.t_star; ++s) {
    const Stage& stage = model.stages[s];
    if (stage.aggregator) x = stage.aggregator->apply(x, &features);
    accumulate(model.mode, stage, forward(stage.learner, x), model.clip, p.scores);
  }
  p.classes = classes_from_scores(model.mode, p.scores);
  return p;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json model_header(const EnsembleModel& m) {
  return {{"mode", to_string(m.mode)},
          {"num_classes", m.num_classes},
          {"propagation", to_string(m.propagation)},
          {"t_star", m.t_star},
          {"clip", m.clip}};
}

json stage_header(const Stage& s) {
  json j{{"weight", s.weight}};
  j["aggregator"] = s.aggregator ? s.aggregator->to_json() : json(nullptr);
  return j;
}

EnsembleModel parse_model(const json& j, const SparseGraph& graph,
                          const std::function<MlpParams(const json&, std::size_t)>& learner) {
  EnsembleModel m;
  try {
    m.mode = boost_mode_from_string(j.at("mode").get<std::string>());
    m.num_classes = j.at("num_classes").get<int>();
    m.propagation = propagation_from_string(j.at("propagation").get<std::string>());
    m.t_star = j.at("t_star").get<std::size_t>();
    m.clip = j.at("clip").get<double>();
    const auto& stages = j.at("stages");
    std::optional<PropagationMatrix> p;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      Stage st;
      st.weight = stages[s].at("weight").get<double>();
      const auto& agg = stages[s].at("aggregator");
      if (!agg.is_null()) {
        if (!p) p = make_propagation(m.propagation, graph);
        st.aggregator = Aggregator::from_json(agg, *p);
      }
      st.learner = learner(stages[s], s);
      m.stages.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw data_error(std::string("model JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kInvalidArgument) throw data_error(std::string("model JSON: ") + e.what());
    throw;
  }
  if (m.t_star > m.stages.size()) throw data_error("model JSON: t_star outside the history");
  return m;
}

std::string learner_file(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "learners/%03zu.json", s + 1);
  return buf;
}

}  // namespace

json to_json(const EnsembleModel& m) {
  json j = model_header(m);
  json stages = json::array();
  for (const Stage& s : m.stages) {
    json st = stage_header(s);
    st["learner"] = to_json(s.learner);
    stages.push_back(std::move(st));
  }
  j["stages"] = std::move(stages);
  return j;
}

EnsembleModel model_from_json(const json& j, const SparseGraph& graph) {
  return parse_model(j, graph, [](const json& st, std::size_t) {
    return mlp_from_json(st.at("learner"));
  });
}

void save_model(const EnsembleModel& m, const fs::path& dir) {
  fs::create_directories(dir / "learners");
  json j = model_header(m);
  json stages = json::array();
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    json st = stage_header(m.stages[s]);
    const std::string rel = learner_file(s);
    st["learner_file"] = rel;
    std::ofstream out(dir / rel);
    if (!out) throw data_error("cannot write " + (dir / rel).string());
    out << to_json(m.stages[s].learner).dump();
    stages.push_back(std::move(st));
  }
  j["stages"] = std::move(stages);
  std::ofstream out(dir / "model.json");
  if (!out) throw data_error("cannot write " + (dir / "model.json").string());
  out << j.dump(2) << '\n';
}

EnsembleModel load_model(const fs::path& model_json, const SparseGraph& graph) {
  std::ifstream in(model_json);
  if (!in) throw data_error("missing model manifest: " + model_json.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw data_error(model_json.string() + ": " + e.what());
  }
  const fs::path base = model_json.parent_path();
  return parse_model(j, graph, [&base](const json& st, std::size_t) {
    if (st.contains("learner")) return mlp_from_json(st.at("learner"));
    const fs::path p = base / st.at("learner_file").get<std::string>();
    std::ifstream lf(p);
    if (!lf) throw data_error("missing learner file: " + p.string());
    try {
      return mlp_from_json(json::parse(lf));
    } catch (const json::exception& e) {
      throw data_error(p.string() + ": " + e.what());
    }
  });
}

// ---------------------------------------------------------------------------
// Trace

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << kTraceHeader << '\n';
  auto num = [&out](double v) {
    if (std::isnan(v)) {
      out << "nan";
    } else {
      out << v;
    }
  };
  const auto old_precision = out.precision(17);
  for (const TraceRow& r : rows) {
    out << r.t << ',';
    for (double v : {r.train_loss, r.train_err, r.test_err, r.cos_theta, r.alpha, r.beta, r.gamma,
                     r.grad_l1}) {
      num(v);
      out << ',';
    }
    out << (r.wlc_pass ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw data_error("trace CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) throw data_error("trace CSV: unexpected header '" + line + "'");
  std::vector<TraceRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) {
      throw data_error("trace CSV line " + std::to_string(lineno) + ": expected 10 columns, found " +
                       std::to_string(cells.size()));
    }
    auto num = [&](std::size_t i) {
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0') {
        throw data_error("trace CSV line " + std::to_string(lineno) + ": bad number '" + cells[i] + "'");
      }
      return v;
    };
    TraceRow r;
    r.t = static_cast<int>(num(0));
    r.train_loss = num(1);
    r.train_err = num(2);
    r.test_err = num(3);
    r.cos_theta = num(4);
    r.alpha = num(5);
    r.beta = num(6);
    r.gamma = num(7);
    r.grad_l1 = num(8);
    r.wlc_pass = num(9) != 0.0;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Drivers

namespace {

std::uint64_t stage_seed(std::uint64_t root, int t, int attempt) {
  std::uint64_t z = root ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(t + 1)) ^
                    (0xc2b2ae3d27d4eb4fULL * static_cast<std::uint64_t>(attempt + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MlpArchitecture learner_arch(const ModelSpec& spec, Index input, Index out, OutputHead head) {
  MlpArchitecture a = MlpArchitecture::make(input, spec.hidden_layers, spec.hidden_width, out, head);
  a.activation = spec.activation;
  a.bias_every_layer = spec.bias_every_layer;
  return a;
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig c = base;
  c.seed = seed;
  return c;
}

// Aggregator for iteration t >= 2, fitted on the previous representation
// when it is learnable.
Aggregator make_stage_aggregator(const ModelSpec& spec, const PropagationMatrix& p, const Matrix& x_prev,
                                 const NodeDataset& data) {
  switch (spec.aggregator) {
    case AggregatorKind::kFixed:
      return Aggregator::fixed(p);
    case AggregatorKind::kInputInjection:
      return Aggregator::input_injection(spec.rho, p);
    case AggregatorKind::kKta: {
      const Matrix y = gather_rows(one_hot(data.labels, data.num_classes), data.split.train());
      return fit_kta(Aggregator::kta(p, spec.kta_degree), x_prev, data.split.train(), y,
                     spec.alignment)
          .aggregator;
    }
  }
  return Aggregator::fixed(p);
}

// Class codes y_code = (K/(K-1)) onehot - 1/(K-1).
Matrix class_codes(const Labels& labels, int k) {
  const double off = -1.0 / (k - 1.0);
  Matrix c = Matrix::Constant(static_cast<Index>(labels.size()), k, off);
  for (std::size_t n = 0; n < labels.size(); ++n) c(static_cast<Index>(n), labels[n]) = 1.0;
  return c;
}

// Negative gradient of the mean multiclass exponential loss over train
// nodes, flattened row-major over all N nodes (zero off train).
Vector neg_exp_grad(const Matrix& f, const Matrix& codes, const NodeIds& train) {
  const auto k = static_cast<double>(f.cols());
  const double m = static_cast<double>(train.size());
  Matrix g = Matrix::Zero(f.rows(), f.cols());
  for (NodeId n : train) {
    const double loss = std::exp(-codes.row(n).dot(f.row(n)) / k);
    g.row(n) = codes.row(n) * (loss / (m * k));
  }
  Matrix gt = g.transpose();
  return Eigen::Map<const Vector>(gt.data(), gt.size());
}

Vector flatten_rows(const Matrix& m) {
  Matrix t = m.transpose();
  return Eigen::Map<const Vector>(t.data(), t.size());
}

void fill_condition(TraceRow& row, const WlcFit& fit) {
  row.cos_theta = fit.cos_theta;
  row.wlc_pass = fit.params.has_value();
  if (fit.params) {
    row.alpha = fit.params->alpha;
    row.beta = fit.params->beta;
    row.gamma = fit.params->gamma();
  } else {
    row.alpha = row.beta = row.gamma = kNaN;
  }
}

void check_classes(const NodeDataset& data, int min_k, const char* who) {
  validate(data);
  if (data.num_classes < min_k) {
    throw invalid_argument(std::string(who) + ": need at least " + std::to_string(min_k) + " classes");
  }
}

}  // namespace

namespace {

Vector renormalized(Vector w, const NodeIds& train) {
  double total = 0.0;
  for (NodeId i : train) total += w[i];
  if (!(total > 0.0) || !std::isfinite(total)) throw numeric_error("SAMME: sample weights degenerated");
  for (NodeId i : train) w[i] /= total;
  return w;
}

}  // namespace

Vector samme_update_weights(const Vector& w, const Labels& predicted, const Labels& labels,
                            double lambda, const NodeIds& train) {
  Vector out = w;
  const double boost = std::exp(lambda);
  for (NodeId i : train) {
    if (predicted[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(i)]) out[i] *= boost;
  }
  return renormalized(std::move(out), train);
}

Vector samme_r_update_weights(const Vector& w, const Matrix& contribution, const Labels& labels,
                              const NodeIds& train) {
  const auto k = static_cast<int>(contribution.cols());
  const Matrix codes = class_codes(labels, k);
  Vector out = w;
  for (NodeId i : train) out[i] *= std::exp(-codes.row(i).dot(contribution.row(i)) / k);
  return renormalized(std::move(out), train);
}

double multiclass_exp_loss(const Matrix& f, const Labels& labels, const NodeIds& ids) {
  if (ids.empty()) throw invalid_argument("multiclass_exp_loss: empty node set");
  const auto k = static_cast<int>(f.cols());
  const double off = -1.0 / (k - 1.0);
  double total = 0.0;
  for (NodeId n : ids) {
    const int y = labels[static_cast<std::size_t>(n)];
    const double dot = f(n, y) + off * (f.row(n).sum() - f(n, y));
    total += std::exp(-dot / k);
  }
  return total / static_cast<double>(ids.size());
}

BoostResult run_functional_gb(const NodeDataset& data, const ModelSpec& spec,
                              const FunctionalConfig& cfg) {
  check_classes(data, 2, "run_functional_gb");
  if (data.num_classes != 2) throw invalid_argument("run_functional_gb: binary labels required");
  if (cfg.T < 1) throw invalid_argument("run_functional_gb: T must be >= 1");
  if (!(cfg.eta1 > 0.0)) throw invalid_argument("run_functional_gb: eta1 must be > 0");
  if (!(cfg.fallback_alpha > 0.0)) throw invalid_argument("run_functional_gb: fallback alpha must be > 0");

  const NodeIds& train = data.split.train();
  const double m = static_cast<double>(train.size());
  const Matrix& x1 = data.features;
  const PropagationMatrix p = make_propagation(spec.propagation, data.graph);
  const MlpArchitecture arch = learner_arch(spec, x1.cols(), 1, OutputHead::kIdentity);

  BoostResult result;
  EnsembleModel& model = result.model;
  model.mode = BoostMode::kFunctional;
  model.num_classes = 2;
  model.propagation = spec.propagation;
  model.clip = cfg.clip;

  auto record = [&](int t, const Vector& y, const WlcFit* fit) {
    const ErrorSummary e = errors(y, data.labels, data.split, cfg.delta, cfg.clip);
    TraceRow row;
    row.t = t;
    row.train_loss = e.surrogate;
    row.train_err = e.train_err;
    row.test_err = e.test_err;
    row.grad_l1 = surrogate_grad(y, data.labels, train).lpNorm<1>();
    if (fit != nullptr) {
      fill_condition(row, *fit);
    } else {
      row.cos_theta = row.alpha = row.beta = row.gamma = kNaN;
    }
    result.trace.push_back(row);
  };

  // t = 1: b^(1) on raw features, fitted to the gradient at Y = 0.
  Vector y = Vector::Zero(x1.rows());
  {
    const Vector target = -m * surrogate_grad(y, data.labels, train);
    const RegressionFit fit = fit_to_gradient(init_mlp(arch, stage_seed(spec.train.seed, 1, 0)),
                                              seeded(spec.train, stage_seed(spec.train.seed, 1, 1)),
                                              x1, target, train);
    const Matrix out = forward(fit.params, x1);
    y = cfg.eta1 * out.col(0);
    model.stages.push_back(Stage{std::nullopt, fit.params, cfg.eta1});
    result.initial_surrogate = surrogate_loss(y, data.labels, train, cfg.clip);
    record(1, y, nullptr);
  }

  Matrix x = x1;
  for (int t = 2; t <= cfg.T + 1; ++t) {
    const Vector g = -surrogate_grad(y, data.labels, train);
    Aggregator agg = make_stage_aggregator(spec, p, x, data);
    Matrix xt = agg.apply(x, &x1);
    const RegressionFit fit = fit_to_gradient(init_mlp(arch, stage_seed(spec.train.seed, t, 0)),
                                              seeded(spec.train, stage_seed(spec.train.seed, t, 1)),
                                              xt, m * g, train);
    const Matrix out = forward(fit.params, xt);
    const Vector z = out.col(0) / m;
    const WlcFit cond = wlc_fit(z, g, cfg.r_policy, cfg.root);
    double eta = 0.0;
    if (cond.params) {
      eta = 4.0 / cond.params->alpha;
    } else if (cfg.fallback == WlcFallback::kStop) {
      result.flagged = true;
      result.flag_reason = "weak learning condition failed at t=" + std::to_string(t);
      break;
    } else {
      if (!result.flagged) {
        result.flagged = true;
        result.flag_reason = "weak learning condition failed at t=" + std::to_string(t) +
                             " (continued with fallback alpha)";
      }
      eta = 4.0 / cfg.fallback_alpha;
    }
    y += eta * out.col(0);
    x = std::move(xt);
    model.stages.push_back(Stage{std::move(agg), fit.params, eta});
    record(t, y, &cond);
  }

  // t* = argmin of ||grad L(Y^(t))||_1, lowest t on ties.
  std::size_t limit = result.trace.size();
  if (cfg.strict_t_star) {
    limit = std::min<std::size_t>(limit, static_cast<std::size_t>(std::max(cfg.T - 1, 1)));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < limit; ++i) {
    if (result.trace[i].grad_l1 < result.trace[best].grad_l1) best = i;
  }
  model.t_star = best + 1;
  return result;
}

namespace {

enum class SammeKind { kHard, kReal };

BoostResult run_samme_impl(const NodeDataset& data, const ModelSpec& spec, const SammeConfig& cfg,
                           SammeKind kind) {
  check_classes(data, 2, kind == SammeKind::kHard ? "run_samme" : "run_samme_r");
  if (cfg.T < 1) throw invalid_argument("SAMME: T must be >= 1");
  const int k = data.num_classes;
  const NodeIds& train = data.split.train();
  const Index n = data.features.rows();
  const Matrix& x1 = data.features;
  const PropagationMatrix p = make_propagation(spec.propagation, data.graph);
  const OutputHead head = kind == SammeKind::kHard ? OutputHead::kArgmax : OutputHead::kSoftmax;
  const MlpArchitecture arch = learner_arch(spec, x1.cols(), k, head);
  const Matrix codes = class_codes(data.labels, k);

  BoostResult result;
  EnsembleModel& model = result.model;
  model.mode = kind == SammeKind::kHard ? BoostMode::kSamme : BoostMode::kSammeR;
  model.num_classes = k;
  model.propagation = spec.propagation;
  model.clip = cfg.clip;

  Vector w = Vector::Zero(n);
  for (NodeId i : train) w[i] = 1.0 / static_cast<double>(train.size());
  Matrix scores = Matrix::Zero(n, k);  // what replay() accumulates
  Matrix x = x1;

  for (int t = 1; t <= cfg.T; ++t) {
    std::optional<Aggregator> agg;
    Matrix xt = x;
    if (t >= 2) {
      agg = make_stage_aggregator(spec, p, x, data);
      xt = agg->apply(x, &x1);
    }
    // Exponential-loss state before this stage.
    const Matrix f_prev = kind == SammeKind::kHard ? Matrix((k - 1.0) * scores) : scores;
    const Vector g = neg_exp_grad(f_prev, codes, train);

    Stage stage;
    stage.aggregator = agg;
    Matrix direction;
    if (kind == SammeKind::kHard) {
      bool accepted = false;
      ClassifierFit fit;
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        fit = fit_classifier(init_mlp(arch, stage_seed(spec.train.seed, t, 2 * attempt)),
                             seeded(spec.train, stage_seed(spec.train.seed, t, 2 * attempt + 1)), xt,
                             data.labels, w, train);
        accepted = fit.weighted_error < 1.0 - 1.0 / k;
      }
      if (!accepted) {
        result.flagged = true;
        result.flag_reason = "weak learner rejected twice at t=" + std::to_string(t) +
                             "; ensemble truncated";
        break;
      }
      const double lambda = samme_lambda(fit.weighted_error, k);
      const Labels h = predict_classes(fit.params, xt);
      direction = class_codes(h, k);
      w = samme_update_weights(w, h, data.labels, lambda, train);
      stage.learner = fit.params;
      stage.weight = lambda;
    } else {
      const ClassifierFit fit =
          fit_classifier(init_mlp(arch, stage_seed(spec.train.seed, t, 0)),
                         seeded(spec.train, stage_seed(spec.train.seed, t, 1)), xt, data.labels, w, train);
      direction = samme_r_contribution(softmax_rows(forward(fit.params, xt)), cfg.clip);
      w = samme_r_update_weights(w, direction, data.labels, train);
      stage.learner = fit.params;
      stage.weight = 1.0;
    }
    const WlcFit cond = wlc_fit(flatten_rows(direction), g);
    accumulate(model.mode, stage, forward(stage.learner, xt), cfg.clip, scores);
    x = std::move(xt);
    model.stages.push_back(std::move(stage));

    const Matrix f = kind == SammeKind::kHard ? Matrix((k - 1.0) * scores) : scores;
    const Labels predicted = argmax_rows(scores);
    TraceRow row;
    row.t = t;
    row.train_loss = multiclass_exp_loss(f, data.labels, train);
    row.train_err = zero_one_error(predicted, data.labels, train);
    row.test_err = zero_one_error(predicted, data.labels, data.split.test());
    row.grad_l1 = neg_exp_grad(f, codes, train).lpNorm<1>();
    fill_condition(row, cond);
    result.trace.push_back(row);
  }
  model.t_star = model.stages.size();
  return result;
}

}  // namespace

BoostResult run_samme(const NodeDataset& data, const ModelSpec& spec, const SammeConfig& cfg) {
  return run_samme_impl(data, spec, cfg, SammeKind::kHard);
}

BoostResult run_samme_r(const NodeDataset& data, const ModelSpec& spec, const SammeConfig& cfg) {
  return run_samme_impl(data, spec, cfg, SammeKind::kReal);
}

// ---------------------------------------------------------------------------
// Fine-tuning

FineTuneProblem::FineTuneProblem(const EnsembleModel& model, const Matrix& features,
                                 const Labels& labels, NodeIds train)
    : model_(model), features_(&features), labels_(labels), train_(std::move(train)) {
  if (model_.t_star == 0) throw invalid_argument("fine_tune: empty model");
  if (train_.empty()) throw invalid_argument("fine_tune: empty train set");
  model_.stages.resize(model_.t_star);
  if (model_.mode == BoostMode::kSamme) {
    for (Stage& s : model_.stages) s.learner.arch.head = OutputHead::kSoftmax;
  }
  if (!has_kta()) {
    Matrix x = features;
    for (const Stage& s : model_.stages) {
      if (s.aggregator) x = s.aggregator->apply(x, &features);
      fixed_rows_.push_back(gather_rows(x, train_));
    }
  }
}

bool FineTuneProblem::has_kta() const {
  return std::any_of(model_.stages.begin(), model_.stages.end(), [](const Stage& s) {
    return s.aggregator && s.aggregator->kind() == AggregatorKind::kKta;
  });
}

Vector FineTuneProblem::parameters() const {
  std::vector<double> v;
  for (const Stage& s : model_.stages) {
    for (const Matrix& w : s.learner.weights) v.insert(v.end(), w.data(), w.data() + w.size());
  }
  for (const Stage& s : model_.stages) {
    if (s.aggregator && s.aggregator->kind() == AggregatorKind::kKta) {
      const Vector& w = s.aggregator->kta_weights();
      v.insert(v.end(), w.data(), w.data() + w.size());
    }
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

void FineTuneProblem::set_parameters(const Vector& theta) {
  Index pos = 0;
  auto take = [&](Index count) {
    if (pos + count > theta.size()) throw invalid_argument("fine_tune: parameter vector too short");
    const Index start = pos;
    pos += count;
    return theta.segment(start, count);
  };
  for (Stage& s : model_.stages) {
    for (Matrix& w : s.learner.weights) {
      const Vector seg = take(w.size());
      std::copy(seg.data(), seg.data() + seg.size(), w.data());
    }
  }
  for (Stage& s : model_.stages) {
    if (s.aggregator && s.aggregator->kind() == AggregatorKind::kKta) {
      s.aggregator->set_kta_weights(take(s.aggregator->kta_weights().size()));
    }
  }
  if (pos != theta.size()) throw invalid_argument("fine_tune: parameter vector too long");
}

double FineTuneProblem::loss(Vector* grad) const {
  const std::size_t stages = model_.stages.size();
  const bool kta = has_kta();
  const Matrix& x1 = *features_;
  const auto m = static_cast<double>(train_.size());
  const Index k = model_.mode == BoostMode::kFunctional ? 1 : model_.num_classes;

  // Forward.
  std::vector<Matrix> reps;  // full X^(t), only when a KTA stage is trainable
  std::vector<ForwardCache> caches(stages);
  std::vector<Matrix> outs(stages);
  Matrix scores = Matrix::Zero(static_cast<Index>(train_.size()), k);
  {
    Matrix x = x1;
    for (std::size_t s = 0; s < stages; ++s) {
      const Stage& st = model_.stages[s];
      Matrix rows;
      if (kta) {
        if (st.aggregator) x = st.aggregator->apply(x, &x1);
        reps.push_back(x);
        rows = gather_rows(x, train_);
      } else {
        rows = fixed_rows_[s];
      }
      outs[s] = forward(st.learner, rows, {}, grad != nullptr ? &caches[s] : nullptr);
      switch (model_.mode) {
        case BoostMode::kFunctional:
          scores += st.weight * outs[s];
          break;
        case BoostMode::kSamme:
          scores += st.weight * softmax_rows(outs[s]);
          break;
        case BoostMode::kSammeR: {
          Matrix c = outs[s];
          for (Index r = 0; r < c.rows(); ++r) c.row(r).array() -= c.row(r).mean();
          scores += (static_cast<double>(k) - 1.0) * c;
          break;
        }
      }
    }
  }

  // Loss and its gradient in the scores.
  double value = 0.0;
  Matrix d_scores(scores.rows(), scores.cols());
  if (model_.mode == BoostMode::kFunctional) {
    for (std::size_t i = 0; i < train_.size(); ++i) {
      const auto r = static_cast<Index>(i);
      const double s = scores(r, 0);
      const int y = labels_[static_cast<std::size_t>(train_[i])];
      value += y == 1 ? (s > 0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s)))
                      : (s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)));
      d_scores(r, 0) = (sigmoid(s) - y) / m;
    }
  } else {
    const Matrix prob = softmax_rows(scores);
    for (std::size_t i = 0; i < train_.size(); ++i) {
      const auto r = static_cast<Index>(i);
      const int y = labels_[static_cast<std::size_t>(train_[i])];
      const double mx = scores.row(r).maxCoeff();
      value += mx + std::log((scores.row(r).array() - mx).exp().sum()) - scores(r, y);
      d_scores.row(r) = prob.row(r) / m;
      d_scores(r, y) -= 1.0 / m;
    }
  }
  value /= m;
  if (grad == nullptr) return value;

  // Backward through every stage.
  std::vector<Matrix> learner_grads;
  std::vector<Matrix> rep_grads(stages);
  for (std::size_t s = 0; s < stages; ++s) {
    const Stage& st = model_.stages[s];
    Matrix up;
    switch (model_.mode) {
      case BoostMode::kFunctional:
        up = st.weight * d_scores;
        break;
      case BoostMode::kSamme: {
        const Matrix p = softmax_rows(outs[s]);
        const Matrix u = st.weight * d_scores;
        up = p.cwiseProduct(u);
        for (Index r = 0; r < up.rows(); ++r) up.row(r) -= p.row(r) * u.row(r).dot(p.row(r));
        break;
      }
      case BoostMode::kSammeR:
        up = (static_cast<double>(k) - 1.0) * d_scores;
        for (Index r = 0; r < up.rows(); ++r) up.row(r).array() -= up.row(r).mean();
        break;
    }
    MlpGradients g = backward(st.learner, caches[s], up, kta);
    for (Matrix& w : g.weights) learner_grads.push_back(std::move(w));
    if (kta) {
      rep_grads[s] = Matrix::Zero(x1.rows(), x1.cols());
      for (std::size_t i = 0; i < train_.size(); ++i) rep_grads[s].row(train_[i]) += g.input.row(static_cast<Index>(i));
    }
  }

  std::vector<double> flat;
  for (const Matrix& w : learner_grads) flat.insert(flat.end(), w.data(), w.data() + w.size());
  if (kta) {
    // Reverse sweep: dL/dX^(s-1) += adjoint of g^(s) applied to dL/dX^(s).
    std::vector<Vector> kta_grads(stages);
    for (std::size_t s = stages; s-- > 1;) {
      const Stage& st = model_.stages[s];
      if (!st.aggregator) continue;
      if (st.aggregator->kind() == AggregatorKind::kKta) {
        const auto terms = st.aggregator->kta_terms(reps[s - 1]);
        Vector gw(static_cast<Index>(terms.size()));
        for (std::size_t j = 0; j < terms.size(); ++j) {
          gw[static_cast<Index>(j)] = rep_grads[s].cwiseProduct(terms[j]).sum();
        }
        kta_grads[s] = gw;
      }
      rep_grads[s - 1] += st.aggregator->apply_adjoint(rep_grads[s]);
    }
    for (std::size_t s = 0; s < stages; ++s) {
      const Stage& st = model_.stages[s];
      if (st.aggregator && st.aggregator->kind() == AggregatorKind::kKta) {
        flat.insert(flat.end(), kta_grads[s].data(), kta_grads[s].data() + kta_grads[s].size());
      }
    }
  }
  *grad = Eigen::Map<const Vector>(flat.data(), static_cast<Index>(flat.size()));
  return value;
}

namespace {

std::pair<double, double> train_val_error(const EnsembleModel& m, const NodeDataset& data) {
  const Prediction p = predict(m, data.features);
  const double train = zero_one_error(p.classes, data.labels, data.split.train());
  const double val = data.split.validation().empty()
                         ? kNaN
                         : zero_one_error(p.classes, data.labels, data.split.validation());
  return {train, val};
}

}  // namespace

FineTuneResult fine_tune(const EnsembleModel& model, const NodeDataset& data, const TrainConfig& cfg) {
  if (model.stages.empty() || model.t_star == 0) throw invalid_argument("fine_tune: empty model");
  FineTuneResult result;
  std::tie(result.train_err_before, result.val_err_before) = train_val_error(model, data);
  result.model = model;
  result.train_err_after = result.train_err_before;
  result.val_err_after = result.val_err_before;
  if (cfg.epochs == 0) return result;
  cfg.validate(data.split.m());

  FineTuneProblem problem(model, data.features, data.labels, data.split.train());
  Vector theta = problem.parameters();
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Vector grad;
    const double value = problem.loss(&grad);
    if (!std::isfinite(value) || !grad.allFinite()) {
      result.flagged = true;
      return result;
    }
    opt.step(theta, grad);
    if (!theta.allFinite()) {
      result.flagged = true;
      return result;
    }
    problem.set_parameters(theta);
  }
  EnsembleModel tuned = problem.model();
  // Stages after t* are not part of the fine-tuned composition.
  result.model = tuned;
  std::tie(result.train_err_after, result.val_err_after) = train_val_error(result.model, data);
  return result;
}

}  // namespace gbgnn
