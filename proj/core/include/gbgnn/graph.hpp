#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "gbgnn/types.hpp"

namespace gbgnn {

using Edge = std::pair<NodeId, NodeId>;

/// Undirected, unweighted, loop-free graph on nodes [0, N).
///
/// Edges are symmetrized and deduplicated on construction: (i, j) and (j, i)
/// describe the same edge. Self-loops are dropped; the count is kept so that
/// loaders can report it.
class SparseGraph {
 public:
  SparseGraph() = default;
  SparseGraph(NodeId n_nodes, std::span<const Edge> edges);

  NodeId n_nodes() const noexcept { return n_nodes_; }
  std::size_t n_edges() const noexcept { return edges_.size(); }

  /// Canonical edges (i < j), sorted lexicographically.
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<std::int64_t>& degree() const noexcept { return degree_; }
  std::size_t dropped_self_loops() const noexcept { return dropped_self_loops_; }

  /// Symmetric 0/1 adjacency matrix A.
  SparseMatrix adjacency() const;

 private:
  NodeId n_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::int64_t> degree_;
  std::size_t dropped_self_loops_ = 0;
};

/// Reads "i j" pairs, one per line; '#' starts a comment. When `n_nodes` is
/// negative the node count is inferred as max id + 1.
/// `raw_edge_lines`, when given, receives the number of edge lines read before
/// deduplication.
SparseGraph read_edge_list(std::istream& in, NodeId n_nodes = -1,
                           std::size_t* raw_edge_lines = nullptr);
void write_edge_list(std::ostream& out, const SparseGraph& g);

/// Square node-mixing operator, stored either as a single sparse matrix or as
/// a lazy ordered product of sparse factors.
///
/// Factors are kept in temporal order: factor 0 is applied first, so a
/// product built from P2, P3, ..., Pt represents Pt * ... * P3 * P2.
class PropagationMatrix {
 public:
  PropagationMatrix() = default;

  static PropagationMatrix identity(Index n);
  /// `symmetric` is verified exactly; a non-symmetric matrix flagged symmetric
  /// is rejected.
  static PropagationMatrix from_sparse(SparseMatrix m, bool symmetric);
  static PropagationMatrix from_dense(const Matrix& m, bool symmetric);

  Index dimension() const noexcept { return n_; }
  bool is_symmetric() const noexcept { return symmetric_; }
  std::size_t factor_count() const noexcept { return factors_.size(); }

  /// Operator that applies `*this` first and then `next`.
  PropagationMatrix then(const PropagationMatrix& next) const;
  /// `*this` applied k times (k >= 0; k = 0 is the identity).
  PropagationMatrix power(int k) const;

  Matrix apply(const Matrix& x) const;
  Matrix apply_transpose(const Matrix& x) const;

  /// Materializes the product; intended for small N only.
  Matrix to_dense() const;

 private:
  Index n_ = 0;
  std::vector<std::shared_ptr<const SparseMatrix>> factors_;
  bool symmetric_ = true;
};

/// D^{-1/2} A D^{-1/2}. Throws if any node has degree zero.
PropagationMatrix normalized_adjacency(const SparseGraph& g);

/// (D + I)^{-1/2} (A + I) (D + I)^{-1/2}.
PropagationMatrix augmented_adjacency(const SparseGraph& g);

/// P * x. Throws on row-count mismatch.
Matrix propagate(const PropagationMatrix& p, const Matrix& x);

/// Largest singular value by power iteration on P^T P.
///
/// Stops when successive estimates differ by at most `tol` relative, or
/// throws a numeric error carrying the last iterate after 10 * N iterations.
double operator_norm(const PropagationMatrix& p, double tol = 1e-8);

/// Power iteration for any linear map given as apply / apply-transpose
/// callables on N-vectors.
template <class Apply, class ApplyTranspose>
double operator_norm_of(Index n, Apply&& apply, ApplyTranspose&& apply_t,
                        double tol = 1e-8);

struct SpectralData {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column n is the unit eigenvector for eigenvalues[n]
};

inline constexpr Index kDefaultEigenCap = 5000;

/// Dense symmetric eigendecomposition. The leading eigenvector is signed to
/// have a nonnegative entry sum. Refuses non-symmetric input and N > cap.
SpectralData eigendecompose(const PropagationMatrix& p,
                            Index cap = kDefaultEigenCap);

/// Coefficients a_{nc} of each column of x in the eigenbasis (N x C).
Matrix spectral_coefficients(const SpectralData& s, const Matrix& x);

}  // namespace gbgnn

#include "gbgnn/detail/power_iteration.hpp"
