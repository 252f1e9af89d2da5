#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "conhd/linalg.hpp"

namespace conhd {

/// Structural regularizer family applied to a within-edge or within-node stack.
enum class RegKind { CE, TV2, LEC2 };
enum class RegSide { Edge, Node };

std::string to_string(RegKind kind);
RegKind parse_reg_kind(std::string_view text);

class RegularizerSpec {
 public:
  RegularizerSpec(RegKind kind, RegSide side, double weight);

  RegKind kind() const noexcept { return kind_; }
  RegSide side() const noexcept { return side_; }
  double weight() const noexcept { return weight_; }

 private:
  RegKind kind_;
  RegSide side_;
  double weight_;
};

/// Clique expansion: sum over ordered row pairs of ||s_i - s_j||^2.
double ce_value(const Matrix& stack);
/// Row i of the result is 4 * rows * (s_i - mean).
Matrix ce_gradient(const Matrix& stack);
/// Closed-form argmin_X s*CE(X) + 0.5||X - Y||^2.
Matrix ce_prox(const Matrix& y, double s);

/// Sum over columns of the squared column range.
double tv2_value(const Matrix& stack);
/// Sum over columns of the squared Lovasz extension of w(i) = min(i, rows - i).
double lec2_value(const Matrix& stack);

double regularizer_value(RegKind kind, const Matrix& stack);

/// Value of s*Omega(X) + 0.5||X - Y||^2, the objective every prox minimizes.
double prox_objective(RegKind kind, const Matrix& x, const Matrix& y, double s);

/// Prox of s*TV2 or s*LEC2, column by column.
///
/// Both regularizers are symmetric, so the prox keeps the order of each
/// column and reduces on the sorted column to a linear term c.x on the
/// monotone cone. Stationarity gives x = isotonic(y - mu*c) with the scalar
/// fixed point mu = 2s * c.x(mu); the left side minus the right is increasing
/// in mu, so mu is found by bisection. Throws ConvergenceError when the
/// bracket is still wider than tol after max_iter halvings.
Matrix prox_iterative(RegKind kind, const Matrix& y, double s, double tol = 1e-8,
                      std::size_t max_iter = 2000);

/// ce_prox for CE, prox_iterative otherwise.
Matrix regularizer_prox(RegKind kind, const Matrix& y, double s);

struct OracleOptions {
  std::size_t restarts = 20;
  std::size_t steps = 50000;
  std::uint64_t seed = 0;
};

/// Brute-force reference prox: multi-start subgradient descent with
/// diminishing steps, best iterate kept. Limited to rows <= 6, cols <= 2.
/// Shares no code path with ce_prox / prox_iterative.
Matrix prox_oracle(RegKind kind, const Matrix& y, double s, const OracleOptions& options = {});

/// Prox of c * 0.5||x - a||^2 at y, i.e. (y + c a) / (1 + c).
Vector squared_loss_prox(const Vector& y, const Vector& a, double c);

}  // namespace conhd
