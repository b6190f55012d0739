#include "gbgnn/theory.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <thread>

#include "gbgnn/error.hpp"

namespace gbgnn {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_sizes(std::size_t m, std::size_t u) {
  if (m < 1 || u < 1) throw invalid_argument("M and U must both be >= 1");
}

}  // namespace

OptimizationBound optimization_bound(double initial_loss, std::size_t m,
                                     const std::vector<double>& gammas, double delta) {
  if (m == 0) throw invalid_argument("optimization_bound: M must be >= 1");
  if (!(initial_loss >= 0.0)) throw invalid_argument("optimization_bound: loss must be >= 0");
  OptimizationBound b;
  for (double g : gammas) {
    if (!(g >= 0.0)) throw invalid_argument("optimization_bound: gammas must be >= 0");
    b.gamma_sum += g;
  }
  if (!(b.gamma_sum > 0.0)) throw invalid_argument("optimization_bound: Gamma_T must be > 0");
  const double numer = (1.0 + std::exp(delta)) * initial_loss;
  const double md = static_cast<double>(m);
  b.value = numer / (2.0 * md * b.gamma_sum);
  const double mean = b.gamma_sum / static_cast<double>(gammas.size());
  for (std::size_t t = 1; t <= gammas.size(); ++t) {
    b.reference.push_back(numer / (2.0 * md * mean * static_cast<double>(t)));
  }
  return b;
}

void ComplexityConstants::validate() const {
  check_sizes(m, u);
  if (layers < 1) throw invalid_argument("ComplexityConstants: L must be >= 1");
  if (!(b_tilde > 0.0)) throw invalid_argument("ComplexityConstants: B̃ must be > 0");
  for (double c : c_tilde) {
    if (!(c > 0.0)) throw invalid_argument("ComplexityConstants: C̃ must be > 0");
  }
}

double ComplexityConstants::d() const {
  double prod = 1.0;
  for (double c : c_tilde) prod *= c;
  // Integer exponent: L = 1 gives exactly 1 whatever B̃ is.
  double pw = 1.0;
  for (int l = 1; l < layers; ++l) pw *= 2.0 * b_tilde;
  return 2.0 * std::sqrt(2.0) * pw * prod;
}

double ComplexityConstants::p0() const {
  const double md = static_cast<double>(m);
  const double ud = static_cast<double>(u);
  return md * ud / ((md + ud) * (md + ud));
}

double ComplexityConstants::q() const { return q_constant(m, u); }

double rademacher_bound(const ComplexityConstants& c, double px_frobenius) {
  c.validate();
  if (!(px_frobenius >= 0.0)) throw invalid_argument("rademacher_bound: norm must be >= 0");
  return c.d() * px_frobenius / std::sqrt(static_cast<double>(c.m) * static_cast<double>(c.u));
}

GeneralizationBound generalization_bound(double train_err, const std::vector<double>& rad_terms,
                                         std::size_t m, std::size_t u, double c0,
                                         double delta_prime) {
  check_sizes(m, u);
  if (!(delta_prime > 0.0 && delta_prime < 1.0)) {
    throw invalid_argument("generalization_bound: delta' must lie in (0, 1)");
  }
  if (!(c0 >= 0.0)) throw invalid_argument("generalization_bound: c0 must be >= 0");
  if (!(train_err >= 0.0)) throw invalid_argument("generalization_bound: train term must be >= 0");
  GeneralizationBound g;
  g.c0 = c0;
  g.delta_prime = delta_prime;
  g.train_term = train_err;
  for (double r : rad_terms) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw invalid_argument("generalization_bound: complexity terms must be finite and >= 0");
    }
    g.complexity += r;
  }
  const double q = q_constant(m, u);
  g.c0_term = c0 * q * std::sqrt(static_cast<double>(std::min(m, u)));
  g.confidence = std::sqrt(s_constant(m, u) * q / 2.0 * std::log(1.0 / delta_prime));
  return g;
}

McEstimate mc_transductive_rademacher(Index n, const std::function<double(const Vector&)>& sup,
                                      std::size_t m, std::size_t u, const McOptions& opts) {
  check_sizes(m, u);
  if (n < 1) throw invalid_argument("mc_transductive_rademacher: empty vectors");
  if (opts.samples < 2) throw invalid_argument("mc_transductive_rademacher: need >= 2 samples");
  const double md = static_cast<double>(m);
  const double ud = static_cast<double>(u);
  const double p = opts.p.value_or(md * ud / ((md + ud) * (md + ud)));
  if (!(p >= 0.0 && p <= 0.5)) throw invalid_argument("mc_transductive_rademacher: p must lie in [0, 1/2]");

  const std::size_t blocks = (opts.samples + kMcBlock - 1) / kMcBlock;
  std::vector<double> sums(blocks, 0.0);
  std::vector<double> sq(blocks, 0.0);
  auto run_block = [&](std::size_t b) {
    std::mt19937_64 rng(splitmix(opts.seed ^ splitmix(b)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t count = std::min(kMcBlock, opts.samples - b * kMcBlock);
    Vector sigma(n);
    for (std::size_t k = 0; k < count; ++k) {
      for (Index i = 0; i < n; ++i) {
        const double r = unif(rng);
        sigma[i] = r < p ? 1.0 : (r < 2.0 * p ? -1.0 : 0.0);
      }
      const double v = sup(sigma);
      sums[b] += v;
      sq[b] += v * v;
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(blocks)));
  if (workers == 1) {
    for (std::size_t b = 0; b < blocks; ++b) run_block(b);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t b = w; b < blocks; b += workers) run_block(b);
      });
    }
    for (auto& th : pool) th.join();
  }
  double sum = 0.0;
  double sumsq = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    sum += sums[b];
    sumsq += sq[b];
  }
  const double count = static_cast<double>(opts.samples);
  const double mean = sum / count;
  const double var = std::max(0.0, (sumsq - count * mean * mean) / (count - 1.0));
  const double q = q_constant(m, u);
  return {q * mean, q * std::sqrt(var / count)};
}

McEstimate mc_transductive_rademacher(const std::vector<Vector>& set, std::size_t m,
                                      std::size_t u, const McOptions& opts) {
  if (set.empty()) throw invalid_argument("mc_transductive_rademacher: empty set");
  const Index n = set.front().size();
  Matrix v(static_cast<Index>(set.size()), n);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].size() != n) throw invalid_argument("mc_transductive_rademacher: length mismatch");
    v.row(static_cast<Index>(i)) = set[i].transpose();
  }
  const bool sym = opts.symmetrized;
  return mc_transductive_rademacher(
      n,
      [&v, sym](const Vector& sigma) {
        const Vector dots = v * sigma;
        return sym ? dots.cwiseAbs().maxCoeff() : dots.maxCoeff();
      },
      m, u, opts);
}

double wlc_complexity_lower_bound(double alpha, double beta) {
  if (!(beta >= 0.0 && alpha > beta)) {
    throw invalid_argument("wlc_complexity_lower_bound: need alpha > beta >= 0");
  }
  return (alpha * alpha - beta * beta) / alpha;
}

SpectralTrajectory smoothing_report(const PropagationMatrix& p, const Matrix& x, int t_max,
                                    Index cap) {
  if (t_max < 0) throw invalid_argument("smoothing_report: t_max must be >= 0");
  if (x.rows() != p.dimension()) throw invalid_argument("smoothing_report: row count mismatch");
  const SpectralData eig = eigendecompose(p, cap);
  const Matrix a2 = spectral_coefficients(eig, x).array().square().matrix();
  const Vector row_mass = a2.rowwise().sum();  // sum_c a_nc^2
  const Vector xi1 = eig.eigenvectors.col(0);
  const double x_sq = x.squaredNorm();

  SpectralTrajectory s;
  s.lambda1 = eig.eigenvalues.size() > 0 ? eig.eigenvalues[0] : kNaN;
  s.lambda2 = eig.eigenvalues.size() > 1 ? eig.eigenvalues[1] : kNaN;
  Matrix cur = x;
  for (int t = 0; t <= t_max; ++t) {
    if (t > 0) cur = p.apply(cur);
    SpectralRow row;
    row.t = t;
    row.frob_direct = cur.norm();
    double spec_sq = 0.0;
    for (Index k = 0; k < row_mass.size(); ++k) {
      spec_sq += std::pow(eig.eigenvalues[k] * eig.eigenvalues[k], t) * row_mass[k];
    }
    row.frob_spectral = std::sqrt(spec_sq);
    row.cos_xi1_max = kNaN;
    for (Index c = 0; c < cur.cols(); ++c) {
      const double nc = cur.col(c).norm();
      if (nc == 0.0) continue;
      const double cs = std::abs(xi1.dot(cur.col(c))) / nc;
      row.cos_xi1_max = std::isnan(row.cos_xi1_max) ? cs : std::max(row.cos_xi1_max, cs);
    }
    const Matrix proj = xi1 * (xi1.transpose() * cur);
    row.rank1_dist = (cur - proj).norm();
    const double d2 = row.frob_direct * row.frob_direct;
    const double gap = std::abs(d2 - spec_sq) / std::max(d2, 1e-12 * x_sq);
    s.max_relative_gap = std::max(s.max_relative_gap, gap);
    s.rows.push_back(row);
  }
  if (s.max_relative_gap > 1e-6) {
    throw numeric_error("smoothing_report: direct and spectral norms differ by " +
                        std::to_string(s.max_relative_gap) + " relative");
  }
  return s;
}

void write_spectral_csv(std::ostream& out, const SpectralTrajectory& s) {
  const auto old = out.precision(17);
  out << kSpectralHeader << '\n';
  auto num = [&out](double v) {
    if (std::isnan(v)) out << "nan";
    else out << v;
  };
  for (const SpectralRow& r : s.rows) {
    out << r.t << ',';
    num(r.frob_direct);
    out << ',';
    num(r.frob_spectral);
    out << ',';
    num(r.cos_xi1_max);
    out << ',';
    num(r.rank1_dist);
    out << '\n';
  }
  out.precision(old);
}

GeometricTest geometric_ratio_test(const std::vector<double>& sequence) {
  GeometricTest g;
  g.sequence = sequence;
  for (std::size_t i = 1; i < sequence.size(); ++i) {
    g.ratios.push_back(sequence[i - 1] > 0.0 ? sequence[i] / sequence[i - 1] : kNaN);
  }
  g.max_ratio = g.ratios.empty() ? kNaN : 0.0;
  bool finite = true;
  for (double r : g.ratios) {
    if (!std::isfinite(r)) finite = false;
    else g.max_ratio = std::max(g.max_ratio, r);
  }
  g.geometric = finite && g.ratios.size() >= 2 && g.max_ratio < 1.0;
  return g;
}

namespace {

// ||P^(t)||_op for the composed linear parts of stages 2..t.
std::vector<double> composed_op_norms(const EnsembleModel& model, std::size_t stages) {
  std::vector<double> out(stages, kNaN);
  if (stages == 0) return out;
  out[0] = 1.0;
  const Index n = model.stages.size() > 1 && model.stages[1].aggregator
                      ? model.stages[1].aggregator->base().dimension()
                      : 0;
  if (n == 0) return out;
  bool shared_symmetric = true;
  for (std::size_t s = 1; s < stages; ++s) {
    const auto& a = model.stages[s].aggregator;
    shared_symmetric = shared_symmetric && a && a->kind() == AggregatorKind::kFixed &&
                       a->base().is_symmetric();
  }
  if (shared_symmetric) {
    // P^(t) = P^(t-1) with P symmetric, so the norm is ||P||^(t-1).
    const double base = operator_norm(model.stages[1].aggregator->base());
    for (std::size_t s = 1; s < stages; ++s) out[s] = out[s - 1] * base;
    return out;
  }
  for (std::size_t t = 1; t < stages; ++t) {
    auto fwd = [&model, t](const Vector& v) {
      Matrix x = v;
      for (std::size_t s = 1; s <= t; ++s) x = model.stages[s].aggregator->apply_linear(x);
      return Vector(x);
    };
    auto adj = [&model, t](const Vector& v) {
      Matrix x = v;
      for (std::size_t s = t; s >= 1; --s) x = model.stages[s].aggregator->apply_adjoint(x);
      return Vector(x);
    };
    out[t] = operator_norm_of(n, fwd, adj);
  }
  return out;
}

}  // namespace

TheoryReport theory_report(const EnsembleModel& model, const NodeDataset& data,
                           const std::vector<TraceRow>& trace, const TheoryOptions& opts) {
  if (model.stages.empty() || model.t_star == 0 || model.t_star > model.stages.size()) {
    throw invalid_argument("theory_report: model has no selected stages");
  }
  TheoryReport r;
  r.mode = to_string(model.mode);
  const NodeId n = data.n_nodes();
  r.m = data.split.m();
  // Transductive setting: every node outside train is unlabeled.
  r.u = static_cast<std::size_t>(n) - r.m;
  check_sizes(r.m, r.u);

  const std::size_t used = model.t_star;
  const Replay rep = replay(model, data.features);
  const Prediction pred = predict(model, data.features);

  const bool have_trace = !trace.empty();
  if (have_trace && trace.size() < model.stages.size()) {
    throw invalid_argument("theory_report: trace is shorter than the model");
  }
  bool all_pass = true;
  if (have_trace) {
    for (std::size_t t = 1; t < trace.size(); ++t) {
      const bool ok = trace[t].wlc_pass && std::isfinite(trace[t].gamma);
      all_pass = all_pass && ok;
      r.gammas.push_back(ok ? trace[t].gamma : 0.0);
      r.gamma_sum += r.gammas.back();
    }
  }

  // Training-error term.
  double realized_train = 0.0;
  if (model.mode == BoostMode::kFunctional) {
    const ErrorSummary e = errors(Vector(pred.scores.col(0)), data.labels, data.split, opts.delta);
    realized_train = e.train_err;
    r.realized_test_err = e.test_err;
    if (have_trace && r.gamma_sum > 0.0) {
      OptimizationSection th;
      th.initial_loss = trace.front().train_loss;
      th.realized_train_err = realized_train;
      th.bound = optimization_bound(th.initial_loss, r.m, r.gammas, opts.delta);
      th.holds = realized_train <= th.bound.value;
      th.guaranteed = all_pass;
      if (!all_pass) r.notes.push_back("bound not guaranteed: some iteration failed the weak learning condition");
      r.optimization = th;
    } else if (have_trace) {
      r.notes.push_back("no iteration passed the weak learning condition; optimization bound undefined");
    }
  } else {
    realized_train = zero_one_error(pred.classes, data.labels, data.split.train());
    r.realized_test_err = zero_one_error(pred.classes, data.labels, data.split.test());
    r.notes.push_back("optimization bound omitted: it covers binary functional boosting only");
  }

  // Per-stage complexity.
  const double nd = static_cast<double>(n);
  const double x0_sq = data.features.squaredNorm();
  const std::vector<double> ops =
      opts.op_norms ? composed_op_norms(model, used) : std::vector<double>(used, kNaN);
  for (std::size_t i = 0; i < used; ++i) {
    const Stage& st = model.stages[i];
    StageComplexity sc;
    sc.t = static_cast<int>(i) + 1;
    sc.eta = st.weight;
    sc.alpha = have_trace && i > 0 ? trace[i].alpha : kNaN;
    // Only an input bias matches the (x, 1) preprocessing of the analysed class.
    if (st.learner.arch.layers() > 1 && st.learner.arch.bias_every_layer) r.exact_class = false;
    ComplexityConstants c;
    c.layers = static_cast<int>(st.learner.arch.layers());
    c.b_tilde = std::max(max_column_l1(st.learner), std::numeric_limits<double>::min());
    c.c_tilde.assign(i, 1.0);
    c.m = r.m;
    c.u = r.u;
    sc.b_tilde = c.b_tilde;
    sc.d = c.d();
    // Learner input is (X^(t), 1); injection also carries X on the doubled space.
    double sq = rep.representation_frobenius[i] * rep.representation_frobenius[i] + nd;
    if (st.aggregator && st.aggregator->kind() == AggregatorKind::kInputInjection) {
      sq += x0_sq;
      r.exact_class = false;
    }
    sc.px_frobenius = std::sqrt(sq);
    sc.op_norm = ops[i];
    sc.rademacher = rademacher_bound(c, sc.px_frobenius);
    r.stages.push_back(sc);
  }
  if (!r.exact_class) {
    r.notes.push_back("model leaves the analysed class (hidden-layer biases or input injection); complexity terms are indicative");
  }

  std::vector<double> rad_terms;
  for (const StageComplexity& sc : r.stages) rad_terms.push_back(std::abs(sc.eta) * sc.rademacher);
  const double train_term = r.optimization ? r.optimization->bound.value : realized_train;
  r.generalization = generalization_bound(train_term, rad_terms, r.m, r.u, opts.c0, opts.delta_prime);

  std::vector<double> seq;
  for (const StageComplexity& sc : r.stages) {
    if (sc.t < 2) continue;
    const double a = model.mode == BoostMode::kFunctional ? sc.alpha : 1.0;
    seq.push_back(sc.d * sc.op_norm / a);
  }
  r.geometric = geometric_ratio_test(seq);
  if (model.mode != BoostMode::kFunctional) {
    r.notes.push_back("ratio test uses D^(t) ||P^(t)||_op without the alpha factor");
  }

  // Spectral trajectory of the base propagation on the raw features.
  const PropagationMatrix base = model.stages.size() > 1 && model.stages[1].aggregator
                                     ? model.stages[1].aggregator->base()
                                     : make_propagation(model.propagation, data.graph);
  if (base.dimension() > opts.eigen_cap) {
    r.spectral_skipped = true;
    r.notes.push_back("spectral section skipped: N = " + std::to_string(base.dimension()) +
                      " exceeds the eigendecomposition cap");
  } else {
    r.spectral = smoothing_report(base, data.features, opts.spectral_t_max, opts.eigen_cap);
  }
  return r;
}

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const TheoryReport& r) {
  json j;
  j["mode"] = r.mode;
  j["M"] = r.m;
  j["U"] = r.u;
  j["gammas"] = r.gammas;
  j["Gamma_T"] = r.gamma_sum;
  if (r.optimization) {
    const auto& th = *r.optimization;
    j["optimization_bound"] = {{"initial_surrogate_loss", th.initial_loss},
                               {"realized_train_err", th.realized_train_err},
                               {"rhs", th.bound.value},
                               {"Gamma_T", th.bound.gamma_sum},
                               {"reference_curve", th.bound.reference},
                               {"holds", th.holds},
                               {"guaranteed", th.guaranteed}};
  }
  json stages = json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"t", s.t},
                      {"eta", num(s.eta)},
                      {"alpha", num(s.alpha)},
                      {"B_tilde", num(s.b_tilde)},
                      {"D", num(s.d)},
                      {"PX_frobenius", num(s.px_frobenius)},
                      {"P_op_norm", num(s.op_norm)},
                      {"rademacher_bound", num(s.rademacher)}});
  }
  j["rademacher"] = stages;
  const auto& g = r.generalization;
  j["test_error_bound"] = {{"train_term", g.train_term},
                           {"complexity_term", g.complexity},
                           {"c0_term", g.c0_term},
                           {"confidence_term", g.confidence},
                           {"c0", g.c0},
                           {"delta_prime", g.delta_prime},
                           {"total", g.total()},
                           {"realized_test_err", r.realized_test_err}};
  j["ratio_test"] = {{"sequence", r.geometric.sequence},
                     {"max_ratio", num(r.geometric.max_ratio)},
                     {"geometric", r.geometric.geometric}};
  j["exact_class"] = r.exact_class;
  j["notes"] = r.notes;
  j["spectral_skipped"] = r.spectral_skipped;
  if (r.spectral) {
    j["spectral"] = {{"lambda1", num(r.spectral->lambda1)},
                     {"lambda2", num(r.spectral->lambda2)},
                     {"max_relative_gap", r.spectral->max_relative_gap},
                     {"t_max", r.spectral->rows.empty() ? 0 : r.spectral->rows.back().t}};
  }
  return j;
}

}  // namespace gbgnn
