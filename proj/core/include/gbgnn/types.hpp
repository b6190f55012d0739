#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstdint>
#include <vector>

namespace gbgnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Node ids are 0-based and dense in [0, N).
using NodeId = std::int64_t;
using NodeIds = std::vector<NodeId>;

/// Class ids in [0, K).
using Labels = std::vector<int>;

/// Gathers the given rows of `x`.
inline Matrix gather_rows(const Matrix& x, const NodeIds& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = x.row(rows[i]);
  }
  return out;
}

}  // namespace gbgnn
