#include "conhd/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "conhd/errors.hpp"

namespace conhd {

namespace {

void require_finite(const Matrix& m, const char* op) {
  if (m.size() == 0) throw ShapeError(std::string(op) + ": empty stack");
  if (!m.allFinite()) throw NumericError(std::string(op) + ": non-finite input");
}

void require_positive(double s, const char* op) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw ParameterError(std::string(op) + ": scale must be positive, got " + std::to_string(s));
  }
}

/// Gap weight w(i), i in [1, n-1], of the splitting function.
double gap_weight(RegKind kind, std::size_t i, std::size_t n) {
  return kind == RegKind::TV2 ? 1.0 : static_cast<double>(std::min(i, n - i));
}

/// Coefficients c with f(x) = c . sort(x), c_i = w(i) - w(i + 1), w(0) = w(n) = 0.
std::vector<double> sorted_coefficients(RegKind kind, std::size_t n) {
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i == 0 ? 0.0 : gap_weight(kind, i, n);
    const double right = i + 1 >= n ? 0.0 : gap_weight(kind, i + 1, n);
    c[i] = left - right;
  }
  return c;
}

double sorted_extension(RegKind kind, std::vector<double> column) {
  std::sort(column.begin(), column.end());
  const std::size_t n = column.size();
  double total = 0.0;
  for (std::size_t i = 1; i < n; ++i) total += gap_weight(kind, i, n) * (column[i] - column[i - 1]);
  return total;
}

double column_extension_value(RegKind kind, const Matrix& stack) {
  double total = 0.0;
  std::vector<double> column(static_cast<std::size_t>(stack.rows()));
  for (Eigen::Index k = 0; k < stack.cols(); ++k) {
    for (Eigen::Index i = 0; i < stack.rows(); ++i) column[static_cast<std::size_t>(i)] = stack(i, k);
    const double f = sorted_extension(kind, column);
    total += f * f;
  }
  return total;
}

/// Pool-adjacent-violators: least-squares non-decreasing fit of `values`.
void isotonic_fit(std::span<const double> values, std::span<double> out) {
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(values.size());
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1) {
      const Block& hi = blocks.back();
      const Block& lo = blocks[blocks.size() - 2];
      if (lo.sum * static_cast<double>(hi.count) <= hi.sum * static_cast<double>(lo.count)) break;
      Block merged{lo.sum + hi.sum, lo.count + hi.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::size_t pos = 0;
  for (const auto& b : blocks) {
    const double mean = b.sum / static_cast<double>(b.count);
    for (std::size_t i = 0; i < b.count; ++i) out[pos++] = mean;
  }
}

}  // namespace

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::CE:
      return "CE";
    case RegKind::TV2:
      return "TV2";
    case RegKind::LEC2:
      return "LEC2";
  }
  return "?";
}

RegKind parse_reg_kind(std::string_view text) {
  if (text == "CE" || text == "ce") return RegKind::CE;
  if (text == "TV2" || text == "tv2" || text == "TV" || text == "tv") return RegKind::TV2;
  if (text == "LEC2" || text == "lec2" || text == "LEC" || text == "lec") return RegKind::LEC2;
  throw ParameterError("unknown regularizer '" + std::string(text) + "'");
}

RegularizerSpec::RegularizerSpec(RegKind kind, RegSide side, double weight)
    : kind_(kind), side_(side), weight_(weight) {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw ParameterError("regularizer weight must be finite and non-negative");
  }
}

double ce_value(const Matrix& stack) {
  require_finite(stack, "ce_value");
  // sum_{i,j} ||s_i - s_j||^2 = 2 n sum_i ||s_i - mean||^2
  const RowVector mean = stack.colwise().mean();
  const double spread = (stack.rowwise() - mean).squaredNorm();
  return 2.0 * static_cast<double>(stack.rows()) * spread;
}

Matrix ce_gradient(const Matrix& stack) {
  require_finite(stack, "ce_gradient");
  const RowVector mean = stack.colwise().mean();
  return 4.0 * static_cast<double>(stack.rows()) * (stack.rowwise() - mean);
}

Matrix ce_prox(const Matrix& y, double s) {
  require_positive(s, "ce_prox");
  require_finite(y, "ce_prox");
  const double k = 4.0 * s * static_cast<double>(y.rows());
  const RowVector mean = y.colwise().mean();
  Matrix out = (y.rowwise() + k * mean) / (1.0 + k);
  return out;
}

double tv2_value(const Matrix& stack) {
  require_finite(stack, "tv2_value");
  return column_extension_value(RegKind::TV2, stack);
}

double lec2_value(const Matrix& stack) {
  require_finite(stack, "lec2_value");
  return column_extension_value(RegKind::LEC2, stack);
}

double regularizer_value(RegKind kind, const Matrix& stack) {
  switch (kind) {
    case RegKind::CE:
      return ce_value(stack);
    case RegKind::TV2:
      return tv2_value(stack);
    case RegKind::LEC2:
      return lec2_value(stack);
  }
  throw ParameterError("unknown regularizer kind");
}

double prox_objective(RegKind kind, const Matrix& x, const Matrix& y, double s) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("prox_objective: shape mismatch");
  return s * regularizer_value(kind, x) + 0.5 * (x - y).squaredNorm();
}

Matrix prox_iterative(RegKind kind, const Matrix& y, double s, double tol, std::size_t max_iter) {
  if (kind == RegKind::CE) throw UnsupportedError("prox_iterative handles TV2 and LEC2 only");
  require_positive(s, "prox_iterative");
  if (!(tol > 0.0)) throw ParameterError("prox_iterative: tol must be positive");
  require_finite(y, "prox_iterative");

  const auto n = static_cast<std::size_t>(y.rows());
  Matrix out = y;
  if (n < 2) return out;

  const std::vector<double> coeff = sorted_coefficients(kind, n);
  std::vector<std::size_t> order(n);
  std::vector<double> sorted(n);
  std::vector<double> shifted(n);
  std::vector<double> fitted(n);

  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return y(static_cast<Eigen::Index>(a), k) < y(static_cast<Eigen::Index>(b), k); });
    for (std::size_t i = 0; i < n; ++i) sorted[i] = y(static_cast<Eigen::Index>(order[i]), k);

    // extension value of the isotonic fit of (sorted - mu * coeff)
    auto extension_at = [&](double mu) {
      for (std::size_t i = 0; i < n; ++i) shifted[i] = sorted[i] - mu * coeff[i];
      isotonic_fit(shifted, fitted);
      double f = 0.0;
      for (std::size_t i = 0; i < n; ++i) f += coeff[i] * fitted[i];
      return f;
    };

    const double f0 = extension_at(0.0);
    if (f0 <= 0.0) continue;  // column already constant

    double lo = 0.0;
    double hi = 2.0 * s * f0;
    const double width_goal = 1e-3 * tol * std::max(1.0, hi);
    std::size_t iter = 0;
    while (hi - lo > width_goal) {
      if (iter++ >= max_iter) {
        throw ConvergenceError("prox_iterative: bisection did not converge", hi - lo);
      }
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;  // bracket at machine resolution
      if (mid - 2.0 * s * extension_at(mid) < 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    extension_at(0.5 * (lo + hi));
    for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(order[i]), k) = fitted[i];
  }
  return out;
}

Matrix regularizer_prox(RegKind kind, const Matrix& y, double s) {
  return kind == RegKind::CE ? ce_prox(y, s) : prox_iterative(kind, y, s);
}

namespace {

constexpr std::size_t kOracleRows = 6;
constexpr std::size_t kOracleCols = 2;

struct SmallStack {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double v[kOracleRows][kOracleCols] = {};
};

/// Regularizer value and one subgradient, written from the definitions
/// (ordered-pair sums, argmax/argmin, sorted gaps) rather than the closed forms.
double oracle_value_and_subgradient(RegKind kind, const SmallStack& x, SmallStack& g) {
  double value = 0.0;
  g.rows = x.rows;
  g.cols = x.cols;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t k = 0; k < x.cols; ++k) g.v[i][k] = 0.0;

  const std::size_t n = x.rows;
  for (std::size_t k = 0; k < x.cols; ++k) {
    if (kind == RegKind::CE) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double diff = x.v[i][k] - x.v[j][k];
          value += diff * diff;
          // d/dx_i of (x_i - x_j)^2 + (x_j - x_i)^2 accumulated over ordered pairs
          g.v[i][k] += 4.0 * diff;
        }
      }
      continue;
    }
    std::size_t idx[kOracleRows];
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 1; i < n; ++i) {
      for (std::size_t j = i; j > 0 && x.v[idx[j - 1]][k] > x.v[idx[j]][k]; --j) std::swap(idx[j - 1], idx[j]);
    }
    double f = 0.0;
    double weight[kOracleRows] = {};
    for (std::size_t gap = 1; gap < n; ++gap) {
      const double w = kind == RegKind::TV2 ? 1.0 : static_cast<double>(std::min(gap, n - gap));
      f += w * (x.v[idx[gap]][k] - x.v[idx[gap - 1]][k]);
      weight[gap] += w;
      weight[gap - 1] -= w;
    }
    value += f * f;
    for (std::size_t i = 0; i < n; ++i) g.v[idx[i]][k] += 2.0 * f * weight[i];
  }
  return value;
}

}  // namespace

Matrix prox_oracle(RegKind kind, const Matrix& y, double s, const OracleOptions& options) {
  if (y.rows() < 1 || static_cast<std::size_t>(y.rows()) > kOracleRows || y.cols() < 1 ||
      static_cast<std::size_t>(y.cols()) > kOracleCols) {
    throw ParameterError("prox_oracle supports at most 6 rows and 2 columns");
  }
  require_positive(s, "prox_oracle");
  require_finite(y, "prox_oracle");

  SmallStack target;
  target.rows = static_cast<std::size_t>(y.rows());
  target.cols = static_cast<std::size_t>(y.cols());
  double scale = 0.0;
  for (std::size_t i = 0; i < target.rows; ++i)
    for (std::size_t k = 0; k < target.cols; ++k) {
      target.v[i][k] = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      scale = std::max(scale, std::abs(target.v[i][k]));
    }

  auto objective = [&](const SmallStack& x, SmallStack& grad) {
    double value = s * oracle_value_and_subgradient(kind, x, grad);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double diff = x.v[i][k] - target.v[i][k];
        value += 0.5 * diff * diff;
        grad.v[i][k] = s * grad.v[i][k] + diff;
      }
    return value;
  };

  // Crude smoothness bound of the smooth pieces; fixes the step schedule.
  const double lipschitz = 1.0 + 4.0 * static_cast<double>(target.rows) * s;
  const double decay = static_cast<double>(std::max<std::size_t>(options.steps / 10, 1));

  Rng rng = make_rng(options.seed, "regularizers.prox_oracle");
  SmallStack best = target;
  SmallStack grad;
  double best_value = objective(best, grad);

  for (std::size_t restart = 0; restart < options.restarts; ++restart) {
    SmallStack x = target;
    if (restart > 0) {
      for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) x.v[i][k] += (1.0 + scale) * standard_normal(rng);
    }
    for (std::size_t t = 0; t < options.steps; ++t) {
      const double value = objective(x, grad);
      if (value < best_value) {
        best_value = value;
        best = x;
      }
      const double step = 1.0 / (lipschitz * (1.0 + static_cast<double>(t) / decay));
      for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) x.v[i][k] -= step * grad.v[i][k];
    }
    const double value = objective(x, grad);
    if (value < best_value) {
      best_value = value;
      best = x;
    }
  }

  Matrix out(y.rows(), y.cols());
  for (std::size_t i = 0; i < best.rows; ++i)
    for (std::size_t k = 0; k < best.cols; ++k)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = best.v[i][k];
  return out;
}

Vector squared_loss_prox(const Vector& y, const Vector& a, double c) {
  if (y.size() != a.size()) throw ShapeError("squared_loss_prox: dimension mismatch");
  require_positive(c, "squared_loss_prox");
  return (y + c * a) / (1.0 + c);
}

}  // namespace conhd
