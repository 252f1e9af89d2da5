// conhd command-line entry point.
//
//   conhd diffuse|gen|train|eval|approx|bench|check --config <path>
//         [--seed N] [--out DIR] [--override key=value]...
//
// Exit codes: 0 success, 2 config error, 3 runtime error, 4 verification
// failure. Failures print one JSON object {"error": {...}} to stderr.

#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "cli_config.hpp"
#include "conhd/diffusion.hpp"
#include "conhd/encpipe.hpp"
#include "conhd/errors.hpp"
#include "conhd/io_util.hpp"
#include "conhd/verify.hpp"

namespace fs = std::filesystem;
using namespace conhd;
using conhd::cli::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitVerification = 4;

class VerificationFailure : public Error {
 public:
  VerificationFailure(const std::string& what, std::vector<std::string> failed)
      : Error(what), failed_(std::move(failed)) {}
  const std::vector<std::string>& failed() const { return failed_; }

 private:
  std::vector<std::string> failed_;
};

/// Native configuration is built in the prepare step, so that everything a
/// config can get wrong surfaces before resolved_config.json is written and
/// heavy work starts.
using Runner = std::function<json()>;
using Prepare = std::function<Runner(const json& cfg, const fs::path& out)>;

struct Command {
  std::string help;
  json defaults;
  Prepare prepare;
};

void write_json(const json& j, const fs::path& path) {
  auto out = open_for_write(path);
  out << j.dump(2) << '\n';
}

std::optional<std::string> optional_string(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<std::string>();
}

json random_graph_defaults(int nodes, int edges, int min_size, int max_size) {
  return {{"nodes", nodes}, {"edges", edges}, {"min_size", min_size}, {"max_size", max_size}};
}

/// Hypergraph from a file, or a seeded random one described by random_graph.
LoadedHypergraph graph_from(const json& cfg, std::uint64_t seed) {
  if (const auto path = optional_string(cfg["hypergraph"])) return load_hypergraph(*path);
  const json& r = cfg["random_graph"];
  const auto n = r["nodes"].get<std::size_t>();
  LoadedHypergraph out;
  out.graph = random_hypergraph(n, r["edges"].get<std::size_t>(),
                                {r["min_size"].get<std::size_t>(), r["max_size"].get<std::size_t>()},
                                derive_seed(seed, "cli.graph"));
  out.original_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.original_ids[i] = static_cast<std::int64_t>(i);
  return out;
}

void check_random_graph(const json& cfg) {
  if (!cfg["hypergraph"].is_null()) return;
  const json& r = cfg["random_graph"];
  for (const char* k : {"nodes", "edges", "min_size", "max_size"}) {
    if (r[k].get<long long>() < 1) throw ConfigError(std::string("random_graph.") + k + " must be >= 1");
  }
  if (r["min_size"].get<long long>() > r["max_size"].get<long long>() ||
      r["max_size"].get<long long>() > r["nodes"].get<long long>()) {
    throw ConfigError("random_graph sizes must satisfy min_size <= max_size <= nodes");
  }
}

/// Node features from a node_id,x_1.. CSV keyed by original node ids, or
/// standard normal features when no path is given.
Matrix node_features_from(const std::optional<std::string>& path, const LoadedHypergraph& lh, int random_dim,
                          std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(lh.graph.num_nodes());
  if (!path) {
    Rng rng = make_rng(seed, "cli.features");
    Matrix x(n, random_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
    return x;
  }
  const CsvTable t = read_csv(*path, {"node_id"});
  std::map<std::int64_t, Eigen::Index> dense;
  for (std::size_t i = 0; i < lh.original_ids.size(); ++i) dense[lh.original_ids[i]] = static_cast<Eigen::Index>(i);
  const auto cols = static_cast<Eigen::Index>(t.header.size()) - 1;
  if (cols < 1) throw ParseError(*path + ": no feature columns");
  Matrix x(n, cols);
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto it = dense.find(parse_integer(t.rows[r][0]));
    if (it == dense.end()) throw ParseError(*path + " line " + std::to_string(t.line_numbers[r]) + ": unknown node");
    if (seen[static_cast<std::size_t>(it->second)]) {
      throw ParseError(*path + " line " + std::to_string(t.line_numbers[r]) + ": duplicate node");
    }
    seen[static_cast<std::size_t>(it->second)] = true;
    for (Eigen::Index c = 0; c < cols; ++c) x(it->second, c) = parse_double(t.rows[r][static_cast<std::size_t>(c) + 1]);
  }
  for (std::size_t v = 0; v < seen.size(); ++v) {
    if (!seen[v]) throw ParseError(*path + ": no row for node " + std::to_string(lh.original_ids[v]));
  }
  return x;
}

json model_defaults(bool with_io) {
  nn::ModelConfig base;
  json j = json::parse(nn::config_to_json(base));
  if (!with_io) {
    j.erase("in_features");
    j.erase("classes");
  }
  return j;
}

nn::ModelConfig model_from(const json& model, std::optional<int> in_features, std::optional<int> classes) {
  json j = model;
  if (in_features) j["in_features"] = *in_features;
  if (classes) j["classes"] = *classes;
  nn::ModelConfig cfg = nn::config_from_json(j.dump());
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return cfg;
}

json check_result_json(const verify::CheckResult& r) {
  return {{"name", r.name},
          {"passed", r.passed},
          {"measured", r.measured},
          {"tolerance", r.tolerance},
          {"detail", r.detail}};
}

// ---------------------------------------------------------------- diffuse

Command diffuse_command() {
  Command c;
  c.help = "Run co-representation diffusion and write its trajectory";
  c.defaults = {{"seed", 0},
                {"hypergraph", nullptr},
                {"random_graph", random_graph_defaults(20, 15, 2, 4)},
                {"features", nullptr},
                {"feature_dim", 1},
                {"method", "GD"},
                {"alpha", 0.01},
                {"rho", 1.0},
                {"lambda", 1.0},
                {"gamma", 1.0},
                {"edge_reg", "CE"},
                {"node_reg", "CE"},
                {"steps", 100},
                {"fidelity", "uniform"},
                {"snapshot_stride", 0}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    DiffusionConfig dc;
    dc.method = parse_method(cfg["method"].get<std::string>());
    dc.alpha = cfg["alpha"].get<double>();
    dc.rho = cfg["rho"].get<double>();
    dc.lambda = cfg["lambda"].get<double>();
    dc.gamma = cfg["gamma"].get<double>();
    dc.edge_reg = parse_reg_kind(cfg["edge_reg"].get<std::string>());
    dc.node_reg = parse_reg_kind(cfg["node_reg"].get<std::string>());
    if (cfg["steps"].get<long long>() < 0) throw ConfigError("steps must be >= 0");
    dc.steps = cfg["steps"].get<std::size_t>();
    dc.seed = cfg["seed"].get<std::uint64_t>();
    const std::string fidelity = cfg["fidelity"].get<std::string>();
    if (fidelity == "uniform") {
      dc.fidelity = Fidelity::Uniform;
    } else if (fidelity == "inverse_node_degree") {
      dc.fidelity = Fidelity::InverseNodeDegree;
    } else {
      throw ConfigError("fidelity must be 'uniform' or 'inverse_node_degree'");
    }
    dc.validate();
    if (cfg["feature_dim"].get<long long>() < 1) throw ConfigError("feature_dim must be >= 1");
    if (cfg["snapshot_stride"].get<long long>() < 0) throw ConfigError("snapshot_stride must be >= 0");
    check_random_graph(cfg);
    return [cfg, dc, out]() -> json {
      const LoadedHypergraph lh = graph_from(cfg, dc.seed);
      const PairIndex idx = build_pair_index(lh.graph);
      const Matrix x = node_features_from(optional_string(cfg["features"]), lh, cfg["feature_dim"].get<int>(), dc.seed);
      const Matrix anchors = broadcast_node_features(idx, x);
      const Trajectory t = run_diffusion(lh.graph, idx, anchors, dc, cfg["snapshot_stride"].get<std::size_t>());
      if (cfg["hypergraph"].is_null()) write_hypergraph(lh.graph, out / "edges.txt");
      write_trajectory_csv(t, out / "trajectory.csv");
      write_corep_csv(idx, t.final_state.h, out / "final_h.csv");
      return {{"pairs", idx.size()},
              {"steps", dc.steps},
              {"initial_objective", t.records.front().objective},
              {"final_objective", t.records.back().objective}};
    };
  };
  return c;
}

// -------------------------------------------------------------------- gen

Command gen_command() {
  Command c;
  c.help = "Generate an outsider, rank-label or semisynthetic dataset directory";
  c.defaults = {{"seed", 0},
                {"kind", "outsider"},
                {"hypergraph", nullptr},
                {"random_graph", random_graph_defaults(100, 150, 2, 6)},
                {"features", nullptr},
                {"feature_dim", 4},
                {"variants", 5},
                {"noise_features", 0},
                {"train_fraction", 0.6},
                {"val_fraction", 0.2},
                {"reg_kind", "CE"},
                {"samples", 100},
                {"val_samples", 20},
                {"test_samples", 20}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    const std::string kind = cfg["kind"].get<std::string>();
    if (kind != "outsider" && kind != "rank-label" && kind != "semisynthetic") {
      throw ConfigError("kind must be one of outsider, rank-label, semisynthetic");
    }
    const enc::SplitFractions fractions{cfg["train_fraction"].get<double>(), cfg["val_fraction"].get<double>()};
    if (fractions.train < 0 || fractions.val < 0 || fractions.train + fractions.val > 1.0) {
      throw ConfigError("train_fraction and val_fraction must be non-negative and sum to at most 1");
    }
    for (const char* k : {"variants", "feature_dim", "samples"}) {
      if (cfg[k].get<long long>() < 1) throw ConfigError(std::string(k) + " must be >= 1");
    }
    for (const char* k : {"noise_features", "val_samples", "test_samples"}) {
      if (cfg[k].get<long long>() < 0) throw ConfigError(std::string(k) + " must be >= 0");
    }
    if (cfg["val_samples"].get<std::size_t>() + cfg["test_samples"].get<std::size_t>() > cfg["samples"].get<std::size_t>()) {
      throw ConfigError("val_samples + test_samples exceeds samples");
    }
    const RegKind reg = parse_reg_kind(cfg["reg_kind"].get<std::string>());
    check_random_graph(cfg);
    return [cfg, kind, fractions, reg, out]() -> json {
      const auto seed = cfg["seed"].get<std::uint64_t>();
      const LoadedHypergraph lh = graph_from(cfg, seed);
      json summary = {{"kind", kind}};
      if (kind == "semisynthetic") {
        const PairIndex idx = build_pair_index(lh.graph);
        const auto samples = generate_semisynthetic(lh.graph, idx, reg, cfg["samples"].get<std::size_t>(), seed);
        write_hypergraph(lh.graph, out / "edges.txt");
        fs::create_directories(out / "samples");
        const std::size_t n_test = cfg["test_samples"].get<std::size_t>();
        const std::size_t n_val = cfg["val_samples"].get<std::size_t>();
        const std::size_t n_train = samples.size() - n_val - n_test;
        auto index = open_for_write(out / "samples.csv");
        index << "sample_id,file,split,sigma\n";
        for (std::size_t s = 0; s < samples.size(); ++s) {
          std::ostringstream name;
          name << "sample_" << std::setw(3) << std::setfill('0') << s << ".csv";
          write_semisynthetic_csv(samples[s], out / "samples" / name.str());
          const char* split = s < n_train ? "train" : (s < n_train + n_val ? "val" : "test");
          index << s << ",samples/" << name.str() << ',' << split << ',' << format_double(samples[s].sigma) << '\n';
        }
        summary["samples"] = samples.size();
        summary["train"] = n_train;
        summary["val"] = n_val;
        summary["test"] = n_test;
        summary["reg_kind"] = to_string(reg);
        return summary;
      }
      enc::EncDataset ds;
      if (kind == "outsider") {
        const Matrix x =
            node_features_from(optional_string(cfg["features"]), lh, cfg["feature_dim"].get<int>(), seed);
        ds = enc::make_outsider_dataset(lh.graph, x, cfg["variants"].get<std::size_t>(), seed, fractions);
        std::size_t retained = 0;
        for (EdgeId e = 0; e < lh.graph.num_edges(); ++e) retained += lh.graph.edge_degree(e) > 3 ? 1 : 0;
        summary["retained_edges"] = retained;
      } else {
        ds = enc::make_rank_label_dataset(lh.graph, seed, {cfg["noise_features"].get<int>()}, fractions);
      }
      enc::write_enc_dataset(ds, out);
      summary["edges"] = ds.graph.num_edges();
      summary["pairs"] = ds.idx.size();
      summary["classes"] = ds.classes;
      return summary;
    };
  };
  return c;
}

// ------------------------------------------------------------------ train

json train_defaults() {
  enc::TrainConfig tc;
  return {{"epochs", tc.epochs},
          {"patience", tc.patience},
          {"min_delta", tc.min_delta},
          {"lr", tc.lr},
          {"batch_edges", static_cast<int>(tc.batch_edges)}};
}

Command train_command() {
  Command c;
  c.help = "Train an edge-dependent node classifier on a dataset directory";
  c.defaults = {{"seed", 0}, {"dataset", nullptr}, {"model", model_defaults(false)}, {"train", train_defaults()}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    const auto dataset = optional_string(cfg["dataset"]);
    if (!dataset) throw ConfigError("dataset is required");
    const json& t = cfg["train"];
    enc::TrainConfig tc;
    tc.epochs = t["epochs"].get<int>();
    tc.patience = t["patience"].get<int>();
    tc.min_delta = t["min_delta"].get<double>();
    tc.lr = t["lr"].get<double>();
    if (t["batch_edges"].get<long long>() < 1) throw ConfigError("train.batch_edges must be >= 1");
    tc.batch_edges = t["batch_edges"].get<std::size_t>();
    tc.seed = cfg["seed"].get<std::uint64_t>();
    if (tc.epochs < 0 || tc.patience < 1 || tc.lr < 0) {
      throw ConfigError("train needs epochs >= 0, patience >= 1 and lr >= 0");
    }
    model_from(cfg["model"], 1, 2);  // shape-independent validation
    return [cfg, tc, dataset, out]() -> json {
      const enc::EncDataset ds = enc::load_enc_dataset(*dataset);
      const nn::ModelConfig model = model_from(cfg["model"], static_cast<int>(ds.features.cols()), ds.classes);
      const enc::TrainResult r = enc::train(ds, model, tc);
      nn::ParameterStore best = r.best;
      const json extra = {{"best_epoch", r.best_epoch}, {"best_val_micro_f1", r.best_val_micro_f1}};
      write_checkpoint(out / "checkpoint.bin", model, best, extra.dump());
      enc::write_train_log(r.log, out / "train_log.csv");
      const enc::Metrics val = enc::evaluate(ds, model, best, enc::Split::Val, tc.batch_edges, tc.seed);
      const enc::Metrics test = enc::evaluate(ds, model, best, enc::Split::Test, tc.batch_edges, tc.seed);
      {
        auto f = open_for_write(out / "metrics.json");
        f << enc::metrics_json(test, std::nullopt) << '\n';
      }
      {
        auto f = open_for_write(out / "val_metrics.json");
        f << enc::metrics_json(val, std::nullopt) << '\n';
      }
      return {{"epochs_run", r.epochs_run},
              {"best_epoch", r.best_epoch},
              {"val_micro_f1", val.micro_f1},
              {"test_micro_f1", test.micro_f1},
              {"test_macro_f1", test.macro_f1}};
    };
  };
  return c;
}

// ------------------------------------------------------------------- eval

Command eval_command() {
  Command c;
  c.help = "Evaluate a checkpoint on one split and optionally export embeddings";
  c.defaults = {{"seed", 0},
                {"dataset", nullptr},
                {"checkpoint", nullptr},
                {"split", "test"},
                {"batch_edges", 64},
                {"export", {{"enabled", false}, {"node", -1}, {"edge", -1}}}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    const auto dataset = optional_string(cfg["dataset"]);
    const auto checkpoint = optional_string(cfg["checkpoint"]);
    if (!dataset || !checkpoint) throw ConfigError("dataset and checkpoint are required");
    const enc::Split split = enc::parse_split(cfg["split"].get<std::string>());
    if (cfg["batch_edges"].get<long long>() < 1) throw ConfigError("batch_edges must be >= 1");
    return [cfg, dataset, checkpoint, split, out]() -> json {
      const enc::EncDataset ds = enc::load_enc_dataset(*dataset);
      nn::Checkpoint ck = nn::read_checkpoint(*checkpoint);
      const enc::Metrics m = enc::evaluate(ds, ck.cfg, ck.store, split, cfg["batch_edges"].get<std::size_t>(),
                                           cfg["seed"].get<std::uint64_t>());
      {
        auto f = open_for_write(out / "metrics.json");
        f << enc::metrics_json(m, std::nullopt) << '\n';
      }
      json summary = {{"split", enc::to_string(split)}, {"micro_f1", m.micro_f1}, {"macro_f1", m.macro_f1}};
      const json& ex = cfg["export"];
      if (ex["enabled"].get<bool>()) {
        enc::PairFilter filter;
        if (ex["node"].get<long long>() >= 0) filter.node = ex["node"].get<NodeId>();
        if (ex["edge"].get<long long>() >= 0) filter.edge = ex["edge"].get<EdgeId>();
        summary["exported_rows"] = enc::export_embeddings(ds, ck.cfg, ck.store, filter, out / "embeddings.csv");
      }
      return summary;
    };
  };
  return c;
}

// ----------------------------------------------------------------- approx

json approx_defaults() {
  enc::ApproxConfig ac;
  return {{"samples", static_cast<int>(ac.samples)},
          {"val_samples", static_cast<int>(ac.val_samples)},
          {"test_samples", static_cast<int>(ac.test_samples)},
          {"epochs", ac.epochs},
          {"patience", ac.patience},
          {"lr", ac.lr},
          {"init_identity", ac.init_identity},
          {"time_budget_seconds", ac.time_budget_seconds}};
}

/// Samples of a semisynthetic directory written by `gen`, in file order.
std::vector<SemisyntheticSample> load_samples(const fs::path& dir, const PairIndex& idx, std::size_t nodes) {
  const CsvTable t = read_csv(dir / "samples.csv", {"sample_id", "file", "split", "sigma"});
  std::vector<SemisyntheticSample> samples;
  for (const auto& row : t.rows) {
    SemisyntheticSample s = read_semisynthetic_csv(dir / row[1]);
    if (static_cast<std::size_t>(s.h0.rows()) != idx.size()) throw ShapeError(row[1] + ": pair count mismatch");
    s.sigma = parse_double(row[3]);
    s.node_features = Matrix::Zero(static_cast<Eigen::Index>(nodes), 1);
    for (NodeId v = 0; v < nodes; ++v) {
      const auto slice = idx.node_slice(v);
      if (!slice.empty()) s.node_features(v, 0) = s.h0(slice[0], 0);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

Command approx_command() {
  Command c;
  c.help = "Train a model to approximate two diffusion steps and compare with the identity baseline";
  json model = model_defaults(false);
  model["dropout"] = 0.0;
  model["d"] = 64;
  c.defaults = {{"seed", 0},
                {"kind", "CE"},
                {"dataset", nullptr},
                {"hypergraph", nullptr},
                {"random_graph", random_graph_defaults(100, 150, 2, 6)},
                {"model", model},
                {"approx", approx_defaults()}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    const RegKind kind = parse_reg_kind(cfg["kind"].get<std::string>());
    const nn::ModelConfig model = model_from(cfg["model"], 1, 1);
    const json& a = cfg["approx"];
    enc::ApproxConfig ac;
    for (const char* k : {"samples", "val_samples", "test_samples", "epochs", "patience"}) {
      if (a[k].get<long long>() < 0) throw ConfigError(std::string("approx.") + k + " must be >= 0");
    }
    ac.samples = a["samples"].get<std::size_t>();
    ac.val_samples = a["val_samples"].get<std::size_t>();
    ac.test_samples = a["test_samples"].get<std::size_t>();
    ac.epochs = a["epochs"].get<int>();
    ac.patience = a["patience"].get<int>();
    ac.lr = a["lr"].get<double>();
    ac.init_identity = a["init_identity"].get<bool>();
    ac.time_budget_seconds = a["time_budget_seconds"].get<double>();
    ac.seed = cfg["seed"].get<std::uint64_t>();
    if (ac.val_samples < 1 || ac.test_samples < 1 || ac.samples <= ac.val_samples + ac.test_samples) {
      throw ConfigError("approx needs val_samples, test_samples >= 1 and some training samples");
    }
    if (ac.init_identity && model.d < 2) throw ConfigError("init_identity needs model.d >= 2");
    check_random_graph(cfg);
    return [cfg, kind, model, ac, out]() -> json {
      enc::ApproxReport r;
      if (const auto dir = optional_string(cfg["dataset"])) {
        const LoadedHypergraph lh = load_hypergraph(fs::path(*dir) / "edges.txt");
        const PairIndex idx = build_pair_index(lh.graph);
        const auto samples = load_samples(*dir, idx, lh.graph.num_nodes());
        enc::ApproxConfig local = ac;
        local.samples = samples.size();
        r = enc::approx_train(lh.graph, idx, samples, model, local);
        r.kind = kind;
      } else {
        const LoadedHypergraph lh = graph_from(cfg, ac.seed);
        r = enc::approx_experiment(lh.graph, kind, model, ac);
      }
      {
        auto f = open_for_write(out / "val_curve.csv");
        f << "epoch,val_mae\n";
        for (const auto& [epoch, mae] : r.val_curve) f << epoch << ',' << format_double(mae) << '\n';
      }
      {
        auto f = open_for_write(out / "metrics.json");
        f << enc::metrics_json(std::nullopt, r.test_mae) << '\n';
      }
      const json report = {{"kind", to_string(r.kind)},
                           {"test_mae", r.test_mae},
                           {"identity_mae", r.identity_mae},
                           {"ratio", r.identity_mae > 0 ? r.test_mae / r.identity_mae : 0.0},
                           {"best_val_mae", r.best_val_mae},
                           {"best_epoch", r.best_epoch},
                           {"epochs_run", r.epochs_run},
                           {"seconds", r.seconds}};
      write_json(report, out / "approx_report.json");
      return report;
    };
  };
  return c;
}

// ------------------------------------------------------------------ bench

Command bench_command() {
  Command c;
  c.help = "Time forward+backward passes over a doubling ladder of hypergraph sizes";
  json model = model_defaults(true);
  model["d"] = 32;
  model["dropout"] = 0.0;
  model["classes"] = 1;
  c.defaults = {{"seed", 0}, {"model", model}, {"base_edges", 250}, {"steps", 4}, {"repeats", 3}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    const nn::ModelConfig model = model_from(cfg["model"], std::nullopt, std::nullopt);
    if (cfg["base_edges"].get<long long>() < 1 || cfg["steps"].get<long long>() < 2 ||
        cfg["repeats"].get<long long>() < 1) {
      throw ConfigError("bench needs base_edges >= 1, steps >= 2, repeats >= 1");
    }
    return [cfg, model, out]() -> json {
      const auto points = verify::bench_ladder(model, cfg["base_edges"].get<std::size_t>(), cfg["steps"].get<int>(),
                                               cfg["repeats"].get<int>(), cfg["seed"].get<std::uint64_t>());
      auto f = open_for_write(out / "bench.csv");
      f << "size,wall_time\n";
      json ratios = json::array();
      for (std::size_t i = 0; i < points.size(); ++i) {
        f << points[i].pairs << ',' << format_double(points[i].seconds) << '\n';
        if (i > 0) ratios.push_back(points[i].seconds / points[i - 1].seconds);
      }
      const json report = {{"exponent", verify::fit_loglog_exponent(points)}, {"ratios", ratios}};
      write_json(report, out / "bench.json");
      return report;
    };
  };
  return c;
}

// ------------------------------------------------------------------ check

const std::vector<std::string> kSuites = {"prox",        "monotonicity", "solvers",
                                          "node_limit",  "equivariance", "gradients",
                                          "regularizer_gradient"};

Command check_command() {
  Command c;
  c.help = "Run the verification suites and report every check";
  c.defaults = {{"seed", 0},
                {"suites", kSuites},
                {"prox_instances", 200},
                {"monotonicity_instances", 200},
                {"monotonicity_steps", 100},
                {"solver_instances", 20},
                {"node_limit_instances", 10},
                {"equivariance_trials", 100},
                {"gradient_step", 1e-5}};
  c.prepare = [](const json& cfg, const fs::path& out) -> Runner {
    std::vector<std::string> suites;
    for (const auto& s : cfg["suites"]) {
      if (!s.is_string() || std::find(kSuites.begin(), kSuites.end(), s.get<std::string>()) == kSuites.end()) {
        throw ConfigError("unknown suite " + s.dump());
      }
      suites.push_back(s.get<std::string>());
    }
    for (const char* k : {"prox_instances", "monotonicity_instances", "monotonicity_steps", "solver_instances",
                          "node_limit_instances", "equivariance_trials"}) {
      if (cfg[k].get<long long>() < 1) throw ConfigError(std::string(k) + " must be >= 1");
    }
    if (!(cfg["gradient_step"].get<double>() > 0.0)) throw ConfigError("gradient_step must be positive");
    return [cfg, suites, out]() -> json {
      const auto seed = cfg["seed"].get<std::uint64_t>();
      std::vector<verify::CheckResult> all;
      auto add = [&](std::vector<verify::CheckResult> rs) { all.insert(all.end(), rs.begin(), rs.end()); };
      for (const std::string& s : suites) {
        if (s == "prox") add(verify::check_prox_oracle(seed, cfg["prox_instances"].get<int>()));
        if (s == "monotonicity") {
          add(verify::check_gd_monotonicity(seed, cfg["monotonicity_instances"].get<int>(),
                                            cfg["monotonicity_steps"].get<int>()));
        }
        if (s == "solvers") add(verify::check_solver_agreement(seed, cfg["solver_instances"].get<int>()));
        if (s == "node_limit") add(verify::check_node_limit(seed, cfg["node_limit_instances"].get<int>()));
        if (s == "equivariance") add(verify::check_equivariance(seed, cfg["equivariance_trials"].get<int>()));
        if (s == "gradients") add(verify::check_model_gradients(seed, cfg["gradient_step"].get<double>()));
        if (s == "regularizer_gradient") add(verify::check_regularizer_gradient(seed));
      }
      json checks = json::array();
      std::vector<std::string> failed;
      for (const auto& r : all) {
        checks.push_back(check_result_json(r));
        if (!r.passed) failed.push_back(r.name);
      }
      const json report = {{"passed", failed.empty()}, {"checks", checks}};
      write_json(report, out / "check_report.json");
      if (!failed.empty()) throw VerificationFailure("verification failed", failed);
      return {{"passed", true}, {"checks", all.size()}};
    };
  };
  return c;
}

void emit_error(int code, const std::string& type, const std::string& message,
                const std::vector<std::string>& failed = {}) {
  json e = {{"code", code}, {"type", type}, {"message", message}};
  if (!failed.empty()) e["failed"] = failed;
  std::cerr << json{{"error", e}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  std::map<std::string, Command> commands = {{"diffuse", diffuse_command()}, {"gen", gen_command()},
                                             {"train", train_command()},     {"eval", eval_command()},
                                             {"approx", approx_command()},   {"bench", bench_command()},
                                             {"check", check_command()}};
  CLI::App app{"Co-representation hypergraph diffusion toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "conhd_out";
  std::vector<std::string> overrides;
  for (auto& [name, cmd] : commands) {
    CLI::App* sub = app.add_subcommand(name, cmd.help);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--override", overrides, "key=value override, dotted keys for nested fields");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error(kExitConfig, "usage", e.what());
    return kExitConfig;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  const Command& cmd = commands.at(name);
  const fs::path out(out_dir);

  Runner run;
  json resolved;
  try {
    cli::ConfigSource source = cli::load_config(config_path);
    cli::apply_overrides(source, overrides);
    resolved = cli::merge_strict(cmd.defaults, source);
    if (seed) resolved["seed"] = *seed;
    if (resolved["seed"].get<long long>() < 0) throw ConfigError("seed must be >= 0");
    run = cmd.prepare(resolved, out);
  } catch (const ConfigError& e) {
    emit_error(kExitConfig, "config", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    emit_error(kExitConfig, "config", e.what());
    return kExitConfig;
  }

  try {
    fs::create_directories(out);
    write_json({{"command", name}, {"config", resolved}}, out / "resolved_config.json");
    const json summary = run();
    std::cout << json{{"command", name}, {"out", out.string()}, {"result", summary}}.dump() << std::endl;
    return 0;
  } catch (const VerificationFailure& e) {
    emit_error(kExitVerification, "verification", e.what(), e.failed());
    return kExitVerification;
  } catch (const std::exception& e) {
    emit_error(kExitRuntime, "runtime", e.what());
    return kExitRuntime;
  }
}
