#include <Eigen/Cholesky>

#include "conhd/errors.hpp"
#include "conhd/verify.hpp"

namespace conhd::verify {

namespace {

/// Adds weight * Hessian of sum_{i,j} (x_i - x_j)^2 over the listed rows.
void add_clique_hessian(Eigen::MatrixXd& k, std::span<const PairId> rows, double weight) {
  for (PairId i : rows) {
    for (PairId j : rows) {
      if (i == j) continue;
      // Hessian of the single ordered term (x_i - x_j)^2
      k(i, i) += 2.0 * weight;
      k(j, j) += 2.0 * weight;
      k(i, j) -= 2.0 * weight;
      k(j, i) -= 2.0 * weight;
    }
  }
}

}  // namespace

Matrix dense_ce_minimizer(const Hypergraph& h, const PairIndex& idx, const Matrix& anchors,
                          double lambda, double gamma, const Vector& fidelity) {
  const auto pairs = static_cast<Eigen::Index>(idx.size());
  if (anchors.rows() != pairs || fidelity.size() != pairs) throw ShapeError("dense_ce_minimizer: shape mismatch");
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(pairs, pairs);
  for (Eigen::Index p = 0; p < pairs; ++p) k(p, p) = fidelity(p);
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    add_clique_hessian(k, idx.edge_slice(e), lambda);
  }
  for (NodeId v = 0; v < h.num_nodes(); ++v) add_clique_hessian(k, idx.node_slice(v), gamma);
  const Eigen::MatrixXd rhs = fidelity.asDiagonal() * anchors;
  const Eigen::MatrixXd solution = k.ldlt().solve(rhs);
  return solution;
}

}  // namespace conhd::verify
