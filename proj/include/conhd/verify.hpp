#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "conhd/diffusion.hpp"
#include "conhd/hypergraph.hpp"
#include "conhd/linalg.hpp"
#include "conhd/model.hpp"
#include "conhd/regularizers.hpp"
#include "conhd/rng.hpp"

namespace conhd::verify {

/// Minimizer of the CE co-representation objective obtained by assembling
/// the dense P x P stationarity matrix from ordered-pair Hessians and
/// factorizing it. Independent of the GD/ADMM/CG solvers; meant for small P.
Matrix dense_ce_minimizer(const Hypergraph& h, const PairIndex& idx, const Matrix& anchors,
                          double lambda, double gamma, const Vector& fidelity);

/// One verification item: passed iff measured <= tolerance (and nothing
/// else went wrong, in which case detail says what).
struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// A random renaming of a hypergraph: node v becomes node_map[v], edge e
/// becomes edge_map[e], members are reshuffled, and pair p of the original
/// is pair pair_map[p] of the renamed graph.
struct Relabeling {
  Hypergraph graph;
  std::vector<NodeId> node_map;
  std::vector<EdgeId> edge_map;
  std::vector<PairId> pair_map;
};

Relabeling random_relabeling(const Hypergraph& h, Rng& rng);
/// out.row(pair_map[p]) = m.row(p)
Matrix relabel_pairs(const Matrix& m, const Relabeling& r);
/// out.row(node_map[v]) = m.row(v)
Matrix relabel_nodes(const Matrix& m, const Relabeling& r);

/// Small random hypergraph used by the suites: edges of size 2..4.
Hypergraph small_instance(Rng& rng, std::size_t min_nodes = 4, std::size_t max_nodes = 10);

using ProxFn = std::function<Matrix(const Matrix&, double)>;
using GradientFn = std::function<Matrix(const Matrix&)>;

/// CE closed form against the oracle and the TV2/LEC2 iterative prox
/// objective against the oracle objective.
std::vector<CheckResult> check_prox_oracle(std::uint64_t seed, int instances = 200, const ProxFn& ce = &ce_prox);
std::vector<CheckResult> check_gd_monotonicity(std::uint64_t seed, int instances = 200, int steps = 100);
/// GD vs ADMM vs dense stationarity solution on CE.
std::vector<CheckResult> check_solver_agreement(std::uint64_t seed, int instances = 20);
/// Within-node spread shrinking in gamma and node means approaching
/// node-representation diffusion.
std::vector<CheckResult> check_node_limit(std::uint64_t seed, int instances = 10);
/// Operators, both layer forms and classical steps under relabeling.
std::vector<CheckResult> check_equivariance(std::uint64_t seed, int trials = 100);
/// Central differences over every parameter tensor of small models.
std::vector<CheckResult> check_model_gradients(std::uint64_t seed, double step = 1e-5);
/// Central differences of the CE regularizer value against ce_grad.
std::vector<CheckResult> check_regularizer_gradient(std::uint64_t seed, const GradientFn& ce_grad = &ce_gradient);

/// Relative gradient error of one tensor, with an absolute floor so that
/// tensors whose gradient vanishes compare on the noise scale of central
/// differences rather than dividing noise by noise.
double relative_gradient_error(const Matrix& analytic, const Matrix& numeric);

/// Max deviation over relabelings of one model's forward output.
double model_equivariance_deviation(const nn::ModelConfig& cfg, std::uint64_t seed, int trials);

struct BenchPoint {
  std::size_t pairs = 0;  ///< sum of edge degrees
  double seconds = 0.0;   ///< median forward+backward wall time
};

/// Times one forward+backward pass of the model (regression head, MAE loss)
/// on random hypergraphs whose edge count is base_edges * 2^k, k < steps.
/// Edge sizes are uniform in [2, 6] and n = m. The median of `repeats`
/// timed passes is kept after one warm-up pass.
std::vector<BenchPoint> bench_ladder(const nn::ModelConfig& cfg, std::size_t base_edges, int steps, int repeats,
                                     std::uint64_t seed);

/// Least-squares slope of log(seconds) against log(pairs).
double fit_loglog_exponent(const std::vector<BenchPoint>& points);

}  // namespace conhd::verify
