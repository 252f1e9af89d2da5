#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "conhd/hypergraph.hpp"
#include "conhd/linalg.hpp"
#include "conhd/regularizers.hpp"

namespace conhd {

enum class Method { GD, ADMM };

std::string to_string(Method method);
Method parse_method(std::string_view text);

/// Weight w_{v,e} of the per-pair fidelity term w/2 ||h - a||^2.
/// InverseNodeDegree (w = 1/d_v) spreads one node-level fidelity term over
/// the node's pairs, which is what makes node-representation diffusion the
/// large-gamma limit of co-representation diffusion.
enum class Fidelity { Uniform, InverseNodeDegree };

struct DiffusionConfig {
  Method method = Method::GD;
  double alpha = 0.01;  ///< GD step size
  double rho = 1.0;     ///< ADMM scale
  double lambda = 1.0;  ///< edge regularizer weight
  double gamma = 1.0;   ///< node regularizer weight
  RegKind edge_reg = RegKind::CE;
  RegKind node_reg = RegKind::CE;
  std::size_t steps = 1;
  std::uint64_t seed = 0;
  Fidelity fidelity = Fidelity::Uniform;

  /// Throws ParameterError on a violated invariant.
  void validate() const;
};

/// Co-representations H (one row per pair), anchors A and, for ADMM, the
/// auxiliary stacks U (read through edge slices) and Z (through node slices).
/// All matrices are indexed by pair id.
struct CoRepState {
  Matrix h;
  Matrix anchors;
  std::optional<Matrix> u;
  std::optional<Matrix> z;
  std::size_t step = 0;
};

/// H = U = Z = anchors; U and Z only for ADMM.
CoRepState init_state(const Matrix& anchors, const PairIndex& idx, Method method);

/// Per-pair fidelity weights for the configured Fidelity mode.
Vector fidelity_weights(const PairIndex& idx, Fidelity fidelity);

/// sum_p w_p/2 ||h_p - a_p||^2 + lambda sum_e Omega_e(H_e) + gamma sum_v Omega_v(H_v)
double objective(const CoRepState& state, const Hypergraph& h, const PairIndex& idx,
                 const DiffusionConfig& cfg);

CoRepState gd_step(const CoRepState& state, const Hypergraph& h, const PairIndex& idx,
                   const DiffusionConfig& cfg);

struct AdmmResiduals {
  double edge = 0.0;  ///< sqrt(sum_e ||prox_e - H'_e||^2)
  double node = 0.0;
};

/// One ADMM sweep. Both auxiliary updates read the pre-update H; the H update
/// reads the new auxiliaries. With lambda = 0 (or gamma = 0) that side is
/// dropped from the H update instead of being averaged in.
CoRepState admm_step(const CoRepState& state, const Hypergraph& h, const PairIndex& idx,
                     const DiffusionConfig& cfg, AdmmResiduals* residuals = nullptr);

struct StepRecord {
  std::size_t step = 0;
  double objective = 0.0;
  double primal_residual_edge = 0.0;
  double primal_residual_node = 0.0;
};

struct Trajectory {
  Method method = Method::GD;
  std::vector<StepRecord> records;  ///< records[0] is the initial state
  std::vector<std::pair<std::size_t, Matrix>> snapshots;
  CoRepState final_state;
};

/// Starts from H = anchors and applies cfg.steps steps. Snapshots of H are
/// kept at the first and last step, plus every `snapshot_stride` steps when
/// the stride is non-zero.
Trajectory run_diffusion(const Hypergraph& h, const PairIndex& idx, const Matrix& anchors,
                         const DiffusionConfig& cfg, std::size_t snapshot_stride = 0);

/// Exact CE minimizer: solves the linear stationarity system by conjugate
/// gradients, column by column. Requires CE on both sides.
Matrix solve_ce_stationary(const Hypergraph& h, const PairIndex& idx, const Matrix& anchors,
                           const DiffusionConfig& cfg);

/// Node-representation diffusion: GD on
///   sum_v 1/2 ||x_v - a_v||^2 + lambda sum_e CE(X_e)
/// with one row per node. Runs cfg.steps steps, stopping early once the
/// relative objective change drops below rel_tol (when rel_tol > 0).
Matrix node_rep_diffusion(const Hypergraph& h, const Matrix& node_features, const DiffusionConfig& cfg,
                          double rel_tol = 0.0);

double node_rep_objective(const Hypergraph& h, const Matrix& x, const Matrix& anchors, double lambda);

/// H0 broadcast: row p is node_features.row(node_of(p)).
Matrix broadcast_node_features(const PairIndex& idx, const Matrix& node_features);

struct SemisyntheticSample {
  double sigma = 0.0;
  Matrix node_features;  ///< n x 1
  Matrix h0;             ///< P x 1
  Matrix h2;             ///< P x 1
};

/// Configuration used to produce H2 for a given regularizer kind: two steps
/// of GD (CE, alpha 0.06) or ADMM (TV2 rho 0.07, LEC2 rho 0.5), with
/// lambda = gamma = 1 and the same kind on both sides.
DiffusionConfig semisynthetic_config(RegKind kind);

/// One-dimensional node features x_v ~ Normal(0, sigma), sigma ~ U[1, 10]
/// per sample; H0 broadcast from the node features, H2 two diffusion steps.
std::vector<SemisyntheticSample> generate_semisynthetic(const Hypergraph& h, const PairIndex& idx,
                                                        RegKind kind, std::size_t count,
                                                        std::uint64_t seed);

/// Trajectory CSV: step,objective[,primal_residual_edge,primal_residual_node]
void write_trajectory_csv(const Trajectory& trajectory, const std::filesystem::path& path);

/// Final H as CSV: pair_id,node_id,edge_id,h_1..h_d
void write_corep_csv(const PairIndex& idx, const Matrix& h, const std::filesystem::path& path);

/// Semi-synthetic sample as CSV: pair_id,h0,h2
void write_semisynthetic_csv(const SemisyntheticSample& sample, const std::filesystem::path& path);
SemisyntheticSample read_semisynthetic_csv(const std::filesystem::path& path);

}  // namespace conhd
