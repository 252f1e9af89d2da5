#pragma once

#include <Eigen/Dense>
#include <span>

#include "conhd/hypergraph.hpp"

namespace conhd {

/// Row-major dense matrix; rows are set elements / pairs, columns features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Copies the listed rows of `source` into a new (rows.size() x cols) stack.
inline Matrix gather_rows(const Matrix& source, std::span<const PairId> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = source.row(rows[i]);
  return out;
}

/// Writes stack row i back to `target` row rows[i].
inline void scatter_rows(const Matrix& stack, std::span<const PairId> rows, Matrix& target) {
  for (std::size_t i = 0; i < rows.size(); ++i) target.row(rows[i]) = stack.row(static_cast<Eigen::Index>(i));
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace conhd
