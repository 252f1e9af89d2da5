#include "conhd/diffusion.hpp"

#include <cmath>

#include "conhd/errors.hpp"
#include "conhd/io_util.hpp"

namespace conhd {

std::string to_string(Method method) { return method == Method::GD ? "GD" : "ADMM"; }

Method parse_method(std::string_view text) {
  if (text == "GD" || text == "gd") return Method::GD;
  if (text == "ADMM" || text == "admm") return Method::ADMM;
  throw ParameterError("unknown diffusion method '" + std::string(text) + "'");
}

void DiffusionConfig::validate() const {
  if (method == Method::GD && !(alpha > 0.0)) throw ParameterError("GD requires alpha > 0");
  if (method == Method::ADMM && !(rho > 0.0)) throw ParameterError("ADMM requires rho > 0");
  if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw ParameterError("lambda and gamma must be >= 0");
  if (!std::isfinite(alpha) || !std::isfinite(rho) || !std::isfinite(lambda) || !std::isfinite(gamma)) {
    throw ParameterError("diffusion parameters must be finite");
  }
}

namespace {

void check_shapes(const CoRepState& state, const PairIndex& idx) {
  const auto pairs = static_cast<Eigen::Index>(idx.size());
  if (state.h.rows() != pairs || state.anchors.rows() != pairs || state.h.cols() != state.anchors.cols()) {
    throw ShapeError("co-representation state does not match the pair index (" +
                     std::to_string(state.h.rows()) + " rows, expected " + std::to_string(pairs) + ")");
  }
  if (!state.h.allFinite()) throw NumericError("co-representations contain non-finite values");
}

void require_ce(const DiffusionConfig& cfg, const char* op) {
  if (cfg.edge_reg != RegKind::CE || cfg.node_reg != RegKind::CE) {
    throw UnsupportedError(std::string(op) + ": gradient descent supports CE only (got edge " +
                           to_string(cfg.edge_reg) + ", node " + to_string(cfg.node_reg) +
                           "); use ADMM for TV2/LEC2");
  }
}

/// lambda * sum_e grad CE(H_e) + gamma * sum_v grad CE(H_v), scattered per pair.
Matrix structural_gradient(const Matrix& h, const PairIndex& idx, double lambda, double gamma) {
  Matrix grad = Matrix::Zero(h.rows(), h.cols());
  if (lambda != 0.0) {
    for (EdgeId e = 0; e < idx.num_edges(); ++e) {
      const auto slice = idx.edge_slice(e);
      const Matrix g = ce_gradient(gather_rows(h, slice));
      for (std::size_t i = 0; i < slice.size(); ++i) grad.row(slice[i]) += lambda * g.row(static_cast<Eigen::Index>(i));
    }
  }
  if (gamma != 0.0) {
    for (NodeId v = 0; v < idx.num_nodes(); ++v) {
      const auto slice = idx.node_slice(v);
      if (slice.empty()) continue;
      const Matrix g = ce_gradient(gather_rows(h, slice));
      for (std::size_t i = 0; i < slice.size(); ++i) grad.row(slice[i]) += gamma * g.row(static_cast<Eigen::Index>(i));
    }
  }
  return grad;
}

}  // namespace

CoRepState init_state(const Matrix& anchors, const PairIndex& idx, Method method) {
  if (anchors.rows() != static_cast<Eigen::Index>(idx.size())) {
    throw ShapeError("anchors must have one row per pair");
  }
  CoRepState state;
  state.h = anchors;
  state.anchors = anchors;
  if (method == Method::ADMM) {
    state.u = anchors;
    state.z = anchors;
  }
  return state;
}

Vector fidelity_weights(const PairIndex& idx, Fidelity fidelity) {
  Vector w = Vector::Ones(static_cast<Eigen::Index>(idx.size()));
  if (fidelity == Fidelity::InverseNodeDegree) {
    for (PairId p = 0; p < idx.size(); ++p) {
      w(p) = 1.0 / static_cast<double>(idx.node_slice(idx.node_of(p)).size());
    }
  }
  return w;
}

double objective(const CoRepState& state, const Hypergraph& h, const PairIndex& idx,
                 const DiffusionConfig& cfg) {
  check_shapes(state, idx);
  if (h.num_pairs() != idx.size()) throw ShapeError("hypergraph and pair index disagree");
  const Vector w = fidelity_weights(idx, cfg.fidelity);
  double total = 0.5 * (w.asDiagonal() * (state.h - state.anchors)).cwiseProduct(state.h - state.anchors).sum();
  if (cfg.lambda != 0.0) {
    for (EdgeId e = 0; e < idx.num_edges(); ++e) {
      total += cfg.lambda * regularizer_value(cfg.edge_reg, gather_rows(state.h, idx.edge_slice(e)));
    }
  }
  if (cfg.gamma != 0.0) {
    for (NodeId v = 0; v < idx.num_nodes(); ++v) {
      const auto slice = idx.node_slice(v);
      if (slice.empty()) continue;
      total += cfg.gamma * regularizer_value(cfg.node_reg, gather_rows(state.h, slice));
    }
  }
  return total;
}

CoRepState gd_step(const CoRepState& state, const Hypergraph& h, const PairIndex& idx,
                   const DiffusionConfig& cfg) {
  if (cfg.method != Method::GD) throw ParameterError("gd_step called with a non-GD config");
  cfg.validate();
  require_ce(cfg, "gd_step");
  check_shapes(state, idx);
  if (h.num_pairs() != idx.size()) throw ShapeError("hypergraph and pair index disagree");

  const Vector w = fidelity_weights(idx, cfg.fidelity);
  Matrix grad = w.asDiagonal() * (state.h - state.anchors);
  grad += structural_gradient(state.h, idx, cfg.lambda, cfg.gamma);

  CoRepState next = state;
  next.h = state.h - cfg.alpha * grad;
  next.step = state.step + 1;
  return next;
}

CoRepState admm_step(const CoRepState& state, const Hypergraph& h, const PairIndex& idx,
                     const DiffusionConfig& cfg, AdmmResiduals* residuals) {
  if (cfg.method != Method::ADMM) throw ParameterError("admm_step called with a non-ADMM config");
  cfg.validate();
  check_shapes(state, idx);
  if (h.num_pairs() != idx.size()) throw ShapeError("hypergraph and pair index disagree");
  if (!state.u || !state.z) throw StateError("admm_step requires initialized U and Z auxiliaries");
  const Matrix& h_cur = state.h;
  const Matrix& u = *state.u;
  const Matrix& z = *state.z;
  if (u.rows() != h_cur.rows() || z.rows() != h_cur.rows() || u.cols() != h_cur.cols() || z.cols() != h_cur.cols()) {
    throw ShapeError("ADMM auxiliaries do not match H");
  }

  const bool edge_active = cfg.lambda > 0.0;
  const bool node_active = cfg.gamma > 0.0;

  // prox outputs, kept for the primal residuals
  Matrix edge_prox = h_cur;
  Matrix node_prox = h_cur;
  Matrix u_next = u;
  Matrix z_next = z;

  for (EdgeId e = 0; e < idx.num_edges(); ++e) {
    const auto slice = idx.edge_slice(e);
    const Matrix h_e = gather_rows(h_cur, slice);
    const Matrix u_e = gather_rows(u, slice);
    const Matrix input = 2.0 * h_e - u_e;
    const Matrix prox = edge_active ? regularizer_prox(cfg.edge_reg, input, cfg.lambda / cfg.rho) : input;
    scatter_rows(prox, slice, edge_prox);
    scatter_rows(Matrix(prox + u_e - h_e), slice, u_next);
  }
  for (NodeId v = 0; v < idx.num_nodes(); ++v) {
    const auto slice = idx.node_slice(v);
    if (slice.empty()) continue;
    const Matrix h_v = gather_rows(h_cur, slice);
    const Matrix z_v = gather_rows(z, slice);
    const Matrix input = 2.0 * h_v - z_v;
    const Matrix prox = node_active ? regularizer_prox(cfg.node_reg, input, cfg.gamma / cfg.rho) : input;
    scatter_rows(prox, slice, node_prox);
    scatter_rows(Matrix(prox + z_v - h_v), slice, z_next);
  }

  const Vector w = fidelity_weights(idx, cfg.fidelity);
  Matrix h_next(h_cur.rows(), h_cur.cols());
  for (Eigen::Index p = 0; p < h_cur.rows(); ++p) {
    const Vector a = state.anchors.row(p).transpose();
    if (edge_active && node_active) {
      const Vector mid = 0.5 * (u_next.row(p) + z_next.row(p)).transpose();
      h_next.row(p) = squared_loss_prox(mid, a, w(p) / (2.0 * cfg.rho)).transpose();
    } else if (edge_active) {
      h_next.row(p) = squared_loss_prox(u_next.row(p).transpose(), a, w(p) / cfg.rho).transpose();
    } else if (node_active) {
      h_next.row(p) = squared_loss_prox(z_next.row(p).transpose(), a, w(p) / cfg.rho).transpose();
    } else {
      h_next.row(p) = a.transpose();
    }
  }

  if (residuals) {
    residuals->edge = edge_active ? (edge_prox - h_next).norm() : 0.0;
    residuals->node = node_active ? (node_prox - h_next).norm() : 0.0;
  }

  CoRepState next;
  next.h = std::move(h_next);
  next.anchors = state.anchors;
  next.u = std::move(u_next);
  next.z = std::move(z_next);
  next.step = state.step + 1;
  return next;
}

Trajectory run_diffusion(const Hypergraph& h, const PairIndex& idx, const Matrix& anchors,
                         const DiffusionConfig& cfg, std::size_t snapshot_stride) {
  cfg.validate();
  if (cfg.method == Method::GD) require_ce(cfg, "run_diffusion");
  Trajectory out;
  out.method = cfg.method;
  CoRepState state = init_state(anchors, idx, cfg.method);
  out.records.push_back({0, objective(state, h, idx, cfg), 0.0, 0.0});
  out.snapshots.emplace_back(0, state.h);
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    StepRecord record;
    record.step = t;
    if (cfg.method == Method::GD) {
      state = gd_step(state, h, idx, cfg);
    } else {
      AdmmResiduals res;
      state = admm_step(state, h, idx, cfg, &res);
      record.primal_residual_edge = res.edge;
      record.primal_residual_node = res.node;
    }
    record.objective = objective(state, h, idx, cfg);
    out.records.push_back(record);
    if (t == cfg.steps || (snapshot_stride > 0 && t % snapshot_stride == 0)) {
      out.snapshots.emplace_back(t, state.h);
    }
  }
  out.final_state = std::move(state);
  return out;
}

Matrix solve_ce_stationary(const Hypergraph& h, const PairIndex& idx, const Matrix& anchors,
                           const DiffusionConfig& cfg) {
  require_ce(cfg, "solve_ce_stationary");
  if (anchors.rows() != static_cast<Eigen::Index>(idx.size())) throw ShapeError("anchors must have one row per pair");
  if (h.num_pairs() != idx.size()) throw ShapeError("hypergraph and pair index disagree");
  const Vector w = fidelity_weights(idx, cfg.fidelity);

  // K x = w .* x + structural gradient (linear in x); K is symmetric positive definite.
  auto apply = [&](const Matrix& x) -> Matrix {
    return Matrix(w.asDiagonal() * x) + structural_gradient(x, idx, cfg.lambda, cfg.gamma);
  };

  const Matrix rhs = w.asDiagonal() * anchors;
  Matrix x = anchors;
  const std::size_t max_iter = 50 * idx.size() + 200;
  for (Eigen::Index col = 0; col < anchors.cols(); ++col) {
    Matrix xc = x.col(col);
    Matrix r = rhs.col(col) - apply(xc);
    Matrix p = r;
    double rr = r.squaredNorm();
    const double target = 1e-28 * std::max(1.0, rhs.col(col).squaredNorm());
    std::size_t iter = 0;
    while (rr > target && iter++ < max_iter) {
      const Matrix kp = apply(p);
      const double step = rr / p.cwiseProduct(kp).sum();
      xc += step * p;
      r -= step * kp;
      const double rr_next = r.squaredNorm();
      p = r + (rr_next / rr) * p;
      rr = rr_next;
    }
    if (rr > 1e-16 * std::max(1.0, rhs.col(col).squaredNorm())) {
      throw ConvergenceError("solve_ce_stationary: conjugate gradients stalled", std::sqrt(rr));
    }
    x.col(col) = xc;
  }
  return x;
}

double node_rep_objective(const Hypergraph& h, const Matrix& x, const Matrix& anchors, double lambda) {
  double total = 0.5 * (x - anchors).squaredNorm();
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    const auto members = h.members(e);
    total += lambda * ce_value(gather_rows(x, members));
  }
  return total;
}

Matrix node_rep_diffusion(const Hypergraph& h, const Matrix& node_features, const DiffusionConfig& cfg,
                          double rel_tol) {
  if (cfg.edge_reg != RegKind::CE) throw UnsupportedError("node_rep_diffusion supports CE only");
  if (!(cfg.alpha > 0.0)) throw ParameterError("node_rep_diffusion requires alpha > 0");
  if (node_features.rows() != static_cast<Eigen::Index>(h.num_nodes())) {
    throw ShapeError("node features must have one row per node");
  }
  Matrix x = node_features;
  double previous = node_rep_objective(h, x, node_features, cfg.lambda);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Matrix grad = x - node_features;
    if (cfg.lambda != 0.0) {
      for (EdgeId e = 0; e < h.num_edges(); ++e) {
        const auto members = h.members(e);
        const Matrix g = ce_gradient(gather_rows(x, members));
        for (std::size_t i = 0; i < members.size(); ++i) grad.row(members[i]) += cfg.lambda * g.row(static_cast<Eigen::Index>(i));
      }
    }
    x -= cfg.alpha * grad;
    if (rel_tol > 0.0) {
      const double current = node_rep_objective(h, x, node_features, cfg.lambda);
      if (std::abs(previous - current) <= rel_tol * std::max(std::abs(previous), 1e-300)) break;
      previous = current;
    }
  }
  return x;
}

Matrix broadcast_node_features(const PairIndex& idx, const Matrix& node_features) {
  if (node_features.rows() != static_cast<Eigen::Index>(idx.num_nodes())) {
    throw ShapeError("node features must have one row per node");
  }
  Matrix out(static_cast<Eigen::Index>(idx.size()), node_features.cols());
  for (PairId p = 0; p < idx.size(); ++p) out.row(p) = node_features.row(idx.node_of(p));
  return out;
}

DiffusionConfig semisynthetic_config(RegKind kind) {
  DiffusionConfig cfg;
  cfg.lambda = 1.0;
  cfg.gamma = 1.0;
  cfg.edge_reg = kind;
  cfg.node_reg = kind;
  cfg.steps = 2;
  switch (kind) {
    case RegKind::CE:
      cfg.method = Method::GD;
      cfg.alpha = 0.06;
      break;
    case RegKind::TV2:
      cfg.method = Method::ADMM;
      cfg.rho = 0.07;
      break;
    case RegKind::LEC2:
      cfg.method = Method::ADMM;
      cfg.rho = 0.5;
      break;
  }
  return cfg;
}

std::vector<SemisyntheticSample> generate_semisynthetic(const Hypergraph& h, const PairIndex& idx,
                                                        RegKind kind, std::size_t count,
                                                        std::uint64_t seed) {
  const DiffusionConfig cfg = semisynthetic_config(kind);
  Rng rng = make_rng(seed, "diffusion.semisynthetic");
  std::vector<SemisyntheticSample> samples;
  samples.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    SemisyntheticSample sample;
    sample.sigma = uniform_real(rng, 1.0, 10.0);
    sample.node_features.resize(static_cast<Eigen::Index>(h.num_nodes()), 1);
    for (Eigen::Index v = 0; v < sample.node_features.rows(); ++v) {
      sample.node_features(v, 0) = sample.sigma * standard_normal(rng);
    }
    sample.h0 = broadcast_node_features(idx, sample.node_features);
    sample.h2 = run_diffusion(h, idx, sample.h0, cfg).final_state.h;
    samples.push_back(std::move(sample));
  }
  return samples;
}

void write_trajectory_csv(const Trajectory& trajectory, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  const bool admm = trajectory.method == Method::ADMM;
  out << "step,objective";
  if (admm) out << ",primal_residual_edge,primal_residual_node";
  out << '\n';
  for (const auto& r : trajectory.records) {
    out << r.step << ',' << format_double(r.objective);
    if (admm) out << ',' << format_double(r.primal_residual_edge) << ',' << format_double(r.primal_residual_node);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_corep_csv(const PairIndex& idx, const Matrix& h, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "pair_id,node_id,edge_id";
  for (Eigen::Index k = 0; k < h.cols(); ++k) out << ",h_" << (k + 1);
  out << '\n';
  for (PairId p = 0; p < idx.size(); ++p) {
    out << p << ',' << idx.node_of(p) << ',' << idx.edge_of(p);
    for (Eigen::Index k = 0; k < h.cols(); ++k) out << ',' << format_double(h(p, k));
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_semisynthetic_csv(const SemisyntheticSample& sample, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "pair_id,h0,h2\n";
  for (Eigen::Index p = 0; p < sample.h0.rows(); ++p) {
    out << p << ',' << format_double(sample.h0(p, 0)) << ',' << format_double(sample.h2(p, 0)) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SemisyntheticSample read_semisynthetic_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path, {"pair_id", "h0", "h2"});
  SemisyntheticSample sample;
  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  sample.h0.resize(rows, 1);
  sample.h2.resize(rows, 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    if (parse_integer(row[0]) != i) {
      throw ParseError(path.string() + ":" + std::to_string(table.line_numbers[static_cast<std::size_t>(i)]) +
                       ": pair ids must be consecutive from 0");
    }
    sample.h0(i, 0) = parse_double(row[1]);
    sample.h2(i, 0) = parse_double(row[2]);
  }
  return sample;
}

}  // namespace conhd
