#include "gbgnn/graph.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "gbgnn/error.hpp"

namespace gbgnn {

SparseGraph::SparseGraph(NodeId n_nodes, std::span<const Edge> edges)
    : n_nodes_(n_nodes), degree_(static_cast<std::size_t>(std::max<NodeId>(n_nodes, 0)), 0) {
  if (n_nodes < 0) throw invalid_argument("SparseGraph: negative node count");
  edges_.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n_nodes || b >= n_nodes) {
      throw invalid_argument("SparseGraph: edge (" + std::to_string(a) + ", " +
                             std::to_string(b) + ") outside [0, " +
                             std::to_string(n_nodes) + ")");
    }
    if (a == b) {
      ++dropped_self_loops_;
      continue;
    }
    edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  for (const auto& [a, b] : edges_) {
    ++degree_[static_cast<std::size_t>(a)];
    ++degree_[static_cast<std::size_t>(b)];
  }
}

SparseMatrix SparseGraph::adjacency() const {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(2 * edges_.size());
  for (const auto& [a, b] : edges_) {
    triplets.emplace_back(a, b, 1.0);
    triplets.emplace_back(b, a, 1.0);
  }
  SparseMatrix m(n_nodes_, n_nodes_);
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

SparseGraph read_edge_list(std::istream& in, NodeId n_nodes,
                           std::size_t* raw_edge_lines) {
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  NodeId max_id = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream fields(line);
    NodeId a = 0;
    NodeId b = 0;
    if (!(fields >> a)) continue;  // blank or comment-only line
    if (!(fields >> b)) {
      throw data_error("edge list line " + std::to_string(line_no) +
                       ": expected two node ids");
    }
    std::string extra;
    if (fields >> extra) {
      throw data_error("edge list line " + std::to_string(line_no) +
                       ": unexpected trailing field '" + extra + "'");
    }
    edges.emplace_back(a, b);
    max_id = std::max({max_id, a, b});
  }
  if (raw_edge_lines != nullptr) *raw_edge_lines = edges.size();
  if (n_nodes < 0) n_nodes = max_id + 1;
  try {
    return SparseGraph(n_nodes, edges);
  } catch (const Error& e) {
    throw data_error(std::string("edge list: ") + e.what());
  }
}

void write_edge_list(std::ostream& out, const SparseGraph& g) {
  out << "# nodes " << g.n_nodes() << " edges " << g.n_edges() << '\n';
  for (const auto& [a, b] : g.edges()) out << a << ' ' << b << '\n';
}

// ---------------------------------------------------------------------------

PropagationMatrix PropagationMatrix::identity(Index n) {
  PropagationMatrix p;
  p.n_ = n;
  p.symmetric_ = true;
  return p;
}

PropagationMatrix PropagationMatrix::from_sparse(SparseMatrix m, bool symmetric) {
  if (m.rows() != m.cols()) {
    throw invalid_argument("PropagationMatrix: matrix is not square");
  }
  m.makeCompressed();
  if (symmetric) {
    const SparseMatrix t = m.transpose();
    const SparseMatrix diff = m - t;
    for (Index k = 0; k < diff.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(diff, k); it; ++it) {
        if (it.value() != 0.0) {
          throw invalid_argument("PropagationMatrix: flagged symmetric but entry (" +
                                 std::to_string(it.row()) + ", " +
                                 std::to_string(it.col()) + ") differs from its transpose");
        }
      }
    }
  }
  PropagationMatrix p;
  p.n_ = m.rows();
  p.symmetric_ = symmetric;
  p.factors_.push_back(std::make_shared<const SparseMatrix>(std::move(m)));
  return p;
}

PropagationMatrix PropagationMatrix::from_dense(const Matrix& m, bool symmetric) {
  return from_sparse(m.sparseView(0.0, 0.0), symmetric);
}

PropagationMatrix PropagationMatrix::then(const PropagationMatrix& next) const {
  if (next.n_ != n_) {
    throw invalid_argument("PropagationMatrix::then: dimension " +
                           std::to_string(n_) + " vs " + std::to_string(next.n_));
  }
  PropagationMatrix p;
  p.n_ = n_;
  p.factors_ = factors_;
  p.factors_.insert(p.factors_.end(), next.factors_.begin(), next.factors_.end());
  // A product is symmetric when every factor is the same symmetric matrix.
  bool same = symmetric_ && next.symmetric_;
  for (const auto& f : p.factors_) {
    if (!same) break;
    same = (f == p.factors_.front());
  }
  p.symmetric_ = same;
  return p;
}

PropagationMatrix PropagationMatrix::power(int k) const {
  if (k < 0) throw invalid_argument("PropagationMatrix::power: negative exponent");
  PropagationMatrix result = identity(n_);
  for (int i = 0; i < k; ++i) result = result.then(*this);
  return result;
}

Matrix PropagationMatrix::apply(const Matrix& x) const {
  if (x.rows() != n_) {
    throw invalid_argument("propagate: operator dimension " + std::to_string(n_) +
                           " but input has " + std::to_string(x.rows()) + " rows");
  }
  Matrix out = x;
  for (const auto& f : factors_) out = (*f) * out;
  return out;
}

Matrix PropagationMatrix::apply_transpose(const Matrix& x) const {
  if (x.rows() != n_) {
    throw invalid_argument("propagate: operator dimension " + std::to_string(n_) +
                           " but input has " + std::to_string(x.rows()) + " rows");
  }
  Matrix out = x;
  for (auto it = factors_.rbegin(); it != factors_.rend(); ++it) {
    out = (*it)->transpose() * out;
  }
  return out;
}

Matrix PropagationMatrix::to_dense() const {
  return apply(Matrix::Identity(n_, n_));
}

// ---------------------------------------------------------------------------

namespace {

SparseMatrix scale_symmetric(const SparseMatrix& a, const Vector& d_inv_sqrt) {
  SparseMatrix out = a;
  for (Index r = 0; r < out.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(out, r); it; ++it) {
      it.valueRef() *= d_inv_sqrt[it.row()] * d_inv_sqrt[it.col()];
    }
  }
  return out;
}

}  // namespace

PropagationMatrix normalized_adjacency(const SparseGraph& g) {
  const Index n = g.n_nodes();
  Vector d_inv_sqrt(n);
  for (Index i = 0; i < n; ++i) {
    const auto deg = g.degree()[static_cast<std::size_t>(i)];
    if (deg == 0) {
      throw invalid_argument("normalized_adjacency: node " + std::to_string(i) +
                             " has degree zero");
    }
    d_inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(deg));
  }
  return PropagationMatrix::from_sparse(scale_symmetric(g.adjacency(), d_inv_sqrt),
                                        true);
}

PropagationMatrix augmented_adjacency(const SparseGraph& g) {
  const Index n = g.n_nodes();
  SparseMatrix a = g.adjacency();
  SparseMatrix eye(n, n);
  eye.setIdentity();
  a += eye;
  Vector d_inv_sqrt(n);
  for (Index i = 0; i < n; ++i) {
    d_inv_sqrt[i] =
        1.0 / std::sqrt(static_cast<double>(g.degree()[static_cast<std::size_t>(i)] + 1));
  }
  return PropagationMatrix::from_sparse(scale_symmetric(a, d_inv_sqrt), true);
}

Matrix propagate(const PropagationMatrix& p, const Matrix& x) { return p.apply(x); }

double operator_norm(const PropagationMatrix& p, double tol) {
  return operator_norm_of(
      p.dimension(), [&](const Vector& v) -> Vector { return p.apply(v); },
      [&](const Vector& v) -> Vector { return p.apply_transpose(v); }, tol);
}

SpectralData eigendecompose(const PropagationMatrix& p, Index cap) {
  if (!p.is_symmetric()) {
    throw invalid_argument("eigendecompose: operator is not flagged symmetric");
  }
  if (p.dimension() > cap) {
    throw invalid_argument("eigendecompose: N = " + std::to_string(p.dimension()) +
                           " exceeds the dense cap " + std::to_string(cap));
  }
  const Matrix dense = p.to_dense();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(dense);
  if (solver.info() != Eigen::Success) {
    throw numeric_error("eigendecompose: symmetric eigensolver failed");
  }
  const Index n = dense.rows();
  SpectralData s;
  s.eigenvalues = solver.eigenvalues().reverse();
  s.eigenvectors = solver.eigenvectors().rowwise().reverse();
  if (n > 0 && s.eigenvectors.col(0).sum() < 0.0) {
    s.eigenvectors.col(0) *= -1.0;
  }
  return s;
}

Matrix spectral_coefficients(const SpectralData& s, const Matrix& x) {
  if (x.rows() != s.eigenvectors.rows()) {
    throw invalid_argument("spectral_coefficients: row count mismatch");
  }
  return s.eigenvectors.transpose() * x;
}

}  // namespace gbgnn
