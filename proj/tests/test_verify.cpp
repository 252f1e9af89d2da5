#include <cmath>

#include "conhd/verify.hpp"
#include "doctest.h"

using namespace conhd;
using namespace conhd::verify;

namespace {

void require_all_pass(const std::vector<CheckResult>& results) {
  REQUIRE_FALSE(results.empty());
  for (const auto& r : results) {
    INFO(r.name << " measured " << r.measured << " tolerance " << r.tolerance << " " << r.detail);
    CHECK(r.passed);
    CHECK(std::isfinite(r.measured));
  }
}

bool any_failed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("suites pass on reduced instance counts") {
  require_all_pass(check_prox_oracle(11, 10));
  require_all_pass(check_gd_monotonicity(11, 20, 50));
  require_all_pass(check_solver_agreement(11, 3));
  require_all_pass(check_node_limit(11, 2));
  require_all_pass(check_equivariance(11, 5));
  require_all_pass(check_regularizer_gradient(11));
}

TEST_CASE("mutations are caught") {
  SUBCASE("sign error in the CE gradient") {
    const GradientFn flipped = [](const Matrix& h) -> Matrix { return -ce_gradient(h); };
    CHECK(any_failed(check_regularizer_gradient(3, flipped)));
  }
  SUBCASE("CE prox without the 1/(1 + s d) shrink") {
    const ProxFn wrong = [](const Matrix& y, double) -> Matrix { return y; };
    const auto results = check_prox_oracle(3, 10, wrong);
    CHECK(any_failed(results));
  }
  SUBCASE("a coarse finite-difference step breaks gradient agreement") {
    CHECK(any_failed(check_model_gradients(3, 0.5)));
  }
}

TEST_CASE("relative gradient error") {
  Matrix a(1, 2), b(1, 2);
  a << 1.0, 0.0;
  b << 1.0, 1e-3;
  CHECK(relative_gradient_error(a, b) == doctest::Approx(1e-3 / std::sqrt(1.0 + 1e-6)));
  CHECK(relative_gradient_error(Matrix::Zero(2, 2), Matrix::Zero(2, 2)) == 0.0);
  // vanishing gradients compare against the absolute floor
  Matrix tiny = Matrix::Constant(1, 1, 1e-9);
  CHECK(relative_gradient_error(Matrix::Zero(1, 1), tiny) == doctest::Approx(1e-3));
}

TEST_CASE("log-log exponent fit") {
  std::vector<BenchPoint> linear, quadratic;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto n = std::size_t{1000} << k;
    linear.push_back({n, 2e-6 * static_cast<double>(n)});
    quadratic.push_back({n, 1e-9 * static_cast<double>(n) * static_cast<double>(n)});
  }
  CHECK(fit_loglog_exponent(linear) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit_loglog_exponent(quadratic) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS(fit_loglog_exponent({linear[0]}));
  CHECK_THROWS(fit_loglog_exponent({linear[0], linear[0]}));
}

TEST_CASE("bench ladder doubles the edge count") {
  nn::ModelConfig cfg;
  cfg.d = 4;
  cfg.layers = 1;
  cfg.classes = 1;
  cfg.dropout = 0.0;
  const auto points = bench_ladder(cfg, 20, 3, 1, 0);
  REQUIRE(points.size() == 3);
  for (const auto& p : points) CHECK(p.seconds > 0.0);
  CHECK(points[1].pairs > points[0].pairs);
  CHECK(points[2].pairs > points[1].pairs);
}
