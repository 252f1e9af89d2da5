#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "conhd/diffusion.hpp"
#include "conhd/errors.hpp"
#include "conhd/verify.hpp"

namespace conhd::verify {

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * standard_normal(rng);
  }
  return m;
}

CheckResult make_result(std::string name, double measured, double tolerance, std::string detail = {}) {
  CheckResult r;
  r.name = std::move(name);
  r.measured = measured;
  r.tolerance = tolerance;
  r.passed = std::isfinite(measured) && measured <= tolerance;
  r.detail = std::move(detail);
  return r;
}

double ce_lipschitz_bound(const Hypergraph& h, double lambda) {
  double worst = 0.0;
  for (NodeId v = 0; v < h.num_nodes(); ++v) {
    double row = 0.0;
    for (EdgeId e : h.incident(v)) row += 8.0 * static_cast<double>(h.edge_degree(e) - 1);
    worst = std::max(worst, row);
  }
  return 1.0 + lambda * worst;
}

}  // namespace

Relabeling random_relabeling(const Hypergraph& h, Rng& rng) {
  Relabeling r;
  auto shuffled = [&rng](std::size_t n) {
    std::vector<std::uint32_t> p(n);
    std::iota(p.begin(), p.end(), 0u);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, 0, i - 1)]);
    return p;
  };
  r.node_map = shuffled(h.num_nodes());
  r.edge_map = shuffled(h.num_edges());
  std::vector<std::vector<NodeId>> members(h.num_edges());
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    auto& out = members[r.edge_map[e]];
    for (NodeId v : h.members(e)) out.push_back(r.node_map[v]);
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[uniform_index(rng, 0, i - 1)]);
  }
  r.graph = Hypergraph(h.num_nodes(), std::move(members));
  const PairIndex before = build_pair_index(h);
  const PairIndex after = build_pair_index(r.graph);
  r.pair_map.resize(before.size());
  for (std::size_t p = 0; p < before.size(); ++p) {
    const auto pid = static_cast<PairId>(p);
    r.pair_map[p] = *after.find(r.node_map[before.node_of(pid)], r.edge_map[before.edge_of(pid)]);
  }
  return r;
}

Matrix relabel_pairs(const Matrix& m, const Relabeling& r) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index p = 0; p < m.rows(); ++p) out.row(r.pair_map[static_cast<std::size_t>(p)]) = m.row(p);
  return out;
}

Matrix relabel_nodes(const Matrix& m, const Relabeling& r) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index v = 0; v < m.rows(); ++v) out.row(r.node_map[static_cast<std::size_t>(v)]) = m.row(v);
  return out;
}

Hypergraph small_instance(Rng& rng, std::size_t min_nodes, std::size_t max_nodes) {
  const std::size_t n = uniform_index(rng, min_nodes, max_nodes);
  const std::size_t m = uniform_index(rng, 2, 8);
  return random_hypergraph(n, m, {2, std::min<std::size_t>(4, n)}, rng());
}

std::vector<CheckResult> check_prox_oracle(std::uint64_t seed, int instances, const ProxFn& ce) {
  Rng rng = make_rng(seed, "verify.prox");
  const OracleOptions options{20, 50000, seed};
  const std::array<double, 3> scales{0.1, 1.0, 10.0};
  double ce_dev = 0.0;
  double excess = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < instances; ++i) {
    const auto rows = static_cast<Eigen::Index>(uniform_index(rng, 1, 5));
    const Matrix y = random_matrix(rng, rows, 1, 2.0);
    const double s = scales[static_cast<std::size_t>(i) % scales.size()];
    ce_dev = std::max(ce_dev, max_abs_diff(ce(y, s), prox_oracle(RegKind::CE, y, s, options)));
    for (RegKind kind : {RegKind::TV2, RegKind::LEC2}) {
      const double fast = prox_objective(kind, prox_iterative(kind, y, s), y, s);
      const double slow = prox_objective(kind, prox_oracle(kind, y, s, options), y, s);
      excess = std::max(excess, fast - slow);
    }
  }
  return {make_result("prox_ce_vs_oracle", ce_dev, 1e-4, "max |ce_prox - oracle|"),
          make_result("prox_iterative_vs_oracle", excess, 1e-6, "max objective excess over the oracle")};
}

std::vector<CheckResult> check_gd_monotonicity(std::uint64_t seed, int instances, int steps) {
  Rng rng = make_rng(seed, "verify.monotone");
  double worst_rise = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < instances; ++i) {
    const Hypergraph h = small_instance(rng);
    const PairIndex idx = build_pair_index(h);
    DiffusionConfig cfg;
    cfg.alpha = 0.01;
    cfg.lambda = uniform_real(rng, 0.1, 1.0);
    cfg.gamma = uniform_real(rng, 0.1, 1.0);
    cfg.steps = static_cast<std::size_t>(steps);
    const Matrix anchors = random_matrix(rng, static_cast<Eigen::Index>(idx.size()), 1 + static_cast<Eigen::Index>(i % 2), 2.0);
    const Trajectory tr = run_diffusion(h, idx, anchors, cfg);
    for (std::size_t t = 1; t < tr.records.size(); ++t) {
      worst_rise = std::max(worst_rise, tr.records[t].objective - tr.records[t - 1].objective);
    }
  }
  return {make_result("gd_monotonicity", worst_rise, 1e-10, "max per-step objective increase")};
}

std::vector<CheckResult> check_solver_agreement(std::uint64_t seed, int instances) {
  Rng rng = make_rng(seed, "verify.solvers");
  double gd_admm = 0.0, gd_exact = 0.0, admm_exact = 0.0;
  for (int i = 0; i < instances; ++i) {
    const Hypergraph h = small_instance(rng);
    const PairIndex idx = build_pair_index(h);
    const double lambda = uniform_real(rng, 0.2, 1.0);
    const double gamma = uniform_real(rng, 0.2, 1.0);
    const Matrix anchors = random_matrix(rng, static_cast<Eigen::Index>(idx.size()), 1, 2.0);
    DiffusionConfig gd;
    gd.lambda = lambda;
    gd.gamma = gamma;
    gd.alpha = 0.005;
    gd.steps = 5000;
    DiffusionConfig admm = gd;
    admm.method = Method::ADMM;
    admm.rho = 1.0;
    admm.steps = 500;
    const Matrix h_gd = run_diffusion(h, idx, anchors, gd).final_state.h;
    const Matrix h_admm = run_diffusion(h, idx, anchors, admm).final_state.h;
    const Matrix exact =
        dense_ce_minimizer(h, idx, anchors, lambda, gamma, Vector::Ones(static_cast<Eigen::Index>(idx.size())));
    gd_admm = std::max(gd_admm, max_abs_diff(h_gd, h_admm));
    gd_exact = std::max(gd_exact, max_abs_diff(h_gd, exact));
    admm_exact = std::max(admm_exact, max_abs_diff(h_admm, exact));
  }
  return {make_result("solver_gd_vs_admm", gd_admm, 1e-3), make_result("solver_gd_vs_direct", gd_exact, 1e-4),
          make_result("solver_admm_vs_direct", admm_exact, 1e-4)};
}

std::vector<CheckResult> check_node_limit(std::uint64_t seed, int instances) {
  Rng rng = make_rng(seed, "verify.node_limit");
  double worst_rise = -std::numeric_limits<double>::infinity();
  double worst_mean = 0.0;
  for (int i = 0; i < instances; ++i) {
    const Hypergraph h = small_instance(rng, 5, 10);
    const PairIndex idx = build_pair_index(h);
    const Matrix x0 = random_matrix(rng, static_cast<Eigen::Index>(h.num_nodes()), 1, 2.0);
    const Matrix anchors = broadcast_node_features(idx, x0);

    DiffusionConfig node_cfg;
    node_cfg.lambda = 1.0;
    node_cfg.gamma = 0.0;
    node_cfg.alpha = 1.0 / ce_lipschitz_bound(h, node_cfg.lambda);
    node_cfg.steps = 400000;
    const Matrix x_star = node_rep_diffusion(h, x0, node_cfg, 1e-15);

    double previous = std::numeric_limits<double>::infinity();
    for (double gamma : {1e2, 1e3, 1e4}) {
      DiffusionConfig cfg;
      cfg.lambda = 1.0;
      cfg.gamma = gamma;
      cfg.fidelity = Fidelity::InverseNodeDegree;
      const Matrix sol = solve_ce_stationary(h, idx, anchors, cfg);
      double spread = 0.0, mean_error = 0.0;
      for (NodeId v = 0; v < h.num_nodes(); ++v) {
        const auto slice = idx.node_slice(v);
        if (slice.empty()) continue;
        const Matrix stack = gather_rows(sol, slice);
        spread = std::max(spread, stack.maxCoeff() - stack.minCoeff());
        mean_error = std::max(mean_error, std::abs(stack.mean() - x_star(v, 0)));
      }
      worst_rise = std::max(worst_rise, spread - previous);
      previous = spread;
      if (gamma == 1e4) worst_mean = std::max(worst_mean, mean_error);
    }
  }
  return {make_result("node_limit_spread_monotone", std::max(worst_rise, 0.0), 0.0,
                      "max increase of within-node spread from one gamma to the next"),
          make_result("node_limit_means", worst_mean, 1e-2, "max |node mean - node-representation solution| at gamma 1e4")};
}

double model_equivariance_deviation(const nn::ModelConfig& cfg, std::uint64_t seed, int trials) {
  Rng rng = make_rng(seed, "verify.equivariance.model");
  nn::ParameterStore store = nn::init_parameters(cfg, seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Hypergraph h = small_instance(rng);
    const Relabeling r = random_relabeling(h, rng);
    const Matrix x0 = random_matrix(rng, static_cast<Eigen::Index>(h.num_nodes()), cfg.in_features);
    const nn::Structure st = nn::build_structure(build_pair_index(h));
    const nn::Structure st2 = nn::build_structure(build_pair_index(r.graph));
    nn::Tape tape;
    const Matrix out = nn::conhd_forward(tape, store, cfg, st, x0, {}).value();
    nn::Tape tape2;
    const Matrix out2 = nn::conhd_forward(tape2, store, cfg, st2, relabel_nodes(x0, r), {}).value();
    worst = std::max(worst, max_abs_diff(relabel_pairs(out, r), out2));
  }
  return worst;
}

std::vector<CheckResult> check_equivariance(std::uint64_t seed, int trials) {
  Rng rng = make_rng(seed, "verify.equivariance");
  std::vector<CheckResult> results;

  for (nn::Operator op : {nn::Operator::UNB, nn::Operator::ISAB}) {
    nn::ModelConfig cfg;
    cfg.op = op;
    cfg.d = 6;
    cfg.heads = 2;
    cfg.layers = 1;
    nn::ParameterStore store = nn::init_parameters(cfg, seed + 1);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      const auto rows = static_cast<Eigen::Index>(uniform_index(rng, 1, 8));
      const Matrix s = random_matrix(rng, rows, cfg.d);
      std::vector<Eigen::Index> perm(static_cast<std::size_t>(rows));
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, 0, i - 1)]);
      Matrix permuted(rows, cfg.d);
      for (Eigen::Index i = 0; i < rows; ++i) permuted.row(i) = s.row(perm[static_cast<std::size_t>(i)]);
      auto segs = std::make_shared<const nn::Segments>(nn::Segments::from_offsets({0, rows}));
      auto apply = [&](const Matrix& input) {
        nn::Tape tape;
        const nn::Var x = tape.constant(input);
        return Matrix(op == nn::Operator::UNB ? nn::unb_forward(tape, store, cfg, "layer.phi.", x, segs, {}).value()
                                              : nn::isab_forward(tape, store, cfg, "layer.phi.", x, segs, {}).value());
      };
      const Matrix out = apply(s);
      const Matrix out_perm = apply(permuted);
      for (Eigen::Index i = 0; i < rows; ++i) {
        worst = std::max(worst, (out_perm.row(i) - out.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff());
      }
    }
    results.push_back(make_result("equivariance_" + nn::to_string(op), worst, 1e-10));
  }

  for (nn::LayerForm form : {nn::LayerForm::GD, nn::LayerForm::ADMM}) {
    double worst = 0.0;
    for (nn::Operator op : {nn::Operator::UNB, nn::Operator::ISAB}) {
      nn::ModelConfig cfg;
      cfg.op = op;
      cfg.method = form;
      cfg.d = 6;
      cfg.heads = 2;
      cfg.layers = 2;
      cfg.share_weights = false;
      cfg.in_features = 2;
      worst = std::max(worst, model_equivariance_deviation(cfg, seed + 2, trials));
    }
    results.push_back(make_result("equivariance_layer_" + nn::to_string(form), worst, 1e-10));
  }

  double classical = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Hypergraph h = small_instance(rng);
    const Relabeling r = random_relabeling(h, rng);
    const PairIndex idx = build_pair_index(h);
    const PairIndex idx2 = build_pair_index(r.graph);
    const Matrix anchors = random_matrix(rng, static_cast<Eigen::Index>(idx.size()), 2);
    DiffusionConfig cfg;
    cfg.steps = 3;
    if (t % 2 == 1) {
      cfg.method = Method::ADMM;
      cfg.edge_reg = RegKind::TV2;
      cfg.node_reg = RegKind::LEC2;
    }
    const Matrix a = run_diffusion(h, idx, anchors, cfg).final_state.h;
    const Matrix b = run_diffusion(r.graph, idx2, relabel_pairs(anchors, r), cfg).final_state.h;
    classical = std::max(classical, max_abs_diff(relabel_pairs(a, r), b));
  }
  results.push_back(make_result("equivariance_classical_steps", classical, 1e-10));
  return results;
}

double relative_gradient_error(const Matrix& analytic, const Matrix& numeric) {
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-6});
  return (analytic - numeric).norm() / denom;
}

namespace {

CheckResult model_gradient_case(const std::string& name, nn::ModelConfig cfg, std::uint64_t seed, double step) {
  Rng rng = make_rng(seed, "verify.gradients." + name);
  const Hypergraph h = random_hypergraph(8, 5, {2, 4}, rng());
  const nn::Structure st = nn::build_structure(build_pair_index(h));
  const Matrix x0 = random_matrix(rng, static_cast<Eigen::Index>(h.num_nodes()), cfg.in_features);
  std::vector<int> labels(static_cast<std::size_t>(st.pairs));
  for (int& y : labels) y = static_cast<int>(uniform_index(rng, 0, static_cast<std::uint64_t>(cfg.classes - 1)));
  nn::ParameterStore store = nn::init_parameters(cfg, seed);
  // move biases and norm parameters off their special initial values
  for (auto& [pname, p] : store) {
    if (pname.ends_with(".b") || pname.ends_with(".g")) p.value += random_matrix(rng, p.value.rows(), p.value.cols(), 0.1);
  }
  auto loss_of = [&](nn::Tape& tape) {
    const nn::Var hL = nn::conhd_forward(tape, store, cfg, st, x0, {});
    return nn::cross_entropy(nn::classify_head(tape, store, cfg, hL), labels);
  };
  {
    nn::Tape tape;
    tape.backward(loss_of(tape), store);
  }
  double worst = 0.0;
  std::string worst_name;
  for (auto& [pname, p] : store) {
    const Matrix analytic = p.grad;
    Matrix numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double saved = p.value(r, c);
        p.value(r, c) = saved + step;
        nn::Tape plus;
        const double up = loss_of(plus).value()(0, 0);
        p.value(r, c) = saved - step;
        nn::Tape minus;
        const double down = loss_of(minus).value()(0, 0);
        p.value(r, c) = saved;
        numeric(r, c) = (up - down) / (2.0 * step);
      }
    }
    const double err = relative_gradient_error(analytic, numeric);
    if (err >= worst) {
      worst = err;
      worst_name = pname;
    }
  }
  return make_result("gradients_" + name, worst, 1e-4,
                     std::to_string(store.tensor_count()) + " tensors; worst " + worst_name);
}

}  // namespace

std::vector<CheckResult> check_model_gradients(std::uint64_t seed, double step) {
  nn::ModelConfig base;
  base.d = 8;
  base.heads = 2;
  base.in_features = 3;
  base.classes = 3;
  base.dropout = 0.0;

  nn::ModelConfig unb = base;
  unb.op = nn::Operator::UNB;
  unb.layers = 2;
  unb.share_weights = false;

  nn::ModelConfig isab = base;
  isab.op = nn::Operator::ISAB;
  isab.layers = 1;

  nn::ModelConfig admm = unb;
  admm.method = nn::LayerForm::ADMM;
  admm.phi_equivariant = false;

  nn::ModelConfig isab_admm = isab;
  isab_admm.method = nn::LayerForm::ADMM;
  isab_admm.varphi_equivariant = false;

  return {model_gradient_case("unb_2layer", unb, seed, step), model_gradient_case("isab_1layer", isab, seed, step),
          model_gradient_case("unb_admm_ablated", admm, seed, step),
          model_gradient_case("isab_admm_ablated", isab_admm, seed, step)};
}

std::vector<CheckResult> check_regularizer_gradient(std::uint64_t seed, const GradientFn& ce_grad) {
  Rng rng = make_rng(seed, "verify.regularizer_gradient");
  double worst = 0.0;
  const double step = 1e-6;
  for (int t = 0; t < 50; ++t) {
    const auto rows = static_cast<Eigen::Index>(uniform_index(rng, 1, 6));
    Matrix x = random_matrix(rng, rows, 1 + static_cast<Eigen::Index>(t % 3));
    const Matrix analytic = ce_grad(x);
    Matrix numeric(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double saved = x(r, c);
        x(r, c) = saved + step;
        const double up = ce_value(x);
        x(r, c) = saved - step;
        const double down = ce_value(x);
        x(r, c) = saved;
        numeric(r, c) = (up - down) / (2.0 * step);
      }
    }
    if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
      return {make_result("gradient_ce_regularizer", std::numeric_limits<double>::infinity(), 1e-6, "shape mismatch")};
    }
    worst = std::max(worst, relative_gradient_error(analytic, numeric));
  }
  return {make_result("gradient_ce_regularizer", worst, 1e-6)};
}

}  // namespace conhd::verify
