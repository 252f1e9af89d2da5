#include <algorithm>
#include <cmath>
#include <set>

#include "conhd/encpipe.hpp"
#include "conhd/errors.hpp"
#include "conhd/io_util.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_helpers.hpp"

using namespace conhd;
using namespace conhd::enc;
using conhd::testing::read_text;
using conhd::testing::TempDir;
using conhd::testing::write_text;

namespace {

nn::ModelConfig small_model(int in_features, int classes) {
  nn::ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.in_features = in_features;
  cfg.classes = classes;
  return cfg;
}

EncDataset small_rank_dataset(std::uint64_t seed) {
  return make_rank_label_dataset(random_hypergraph(40, 30, {2, 6}, seed), seed);
}

// Star: node 0 is in `spokes` edges {0, i}.
EncDataset star_dataset(std::size_t spokes) {
  std::vector<std::vector<NodeId>> edges;
  for (std::size_t i = 1; i <= spokes; ++i) edges.push_back({0, static_cast<NodeId>(i)});
  EncDataset ds;
  ds.graph = Hypergraph(spokes + 1, std::move(edges));
  ds.idx = build_pair_index(ds.graph);
  ds.features = Matrix::Ones(static_cast<Eigen::Index>(spokes + 1), 1);
  ds.labels.assign(ds.idx.size(), 0);
  ds.classes = 1;
  ds.edge_split.assign(spokes, Split::Train);
  return ds;
}

// Tercile of the rank by counting members with a smaller (score, id) key.
int brute_rank_label(const Hypergraph& h, const std::vector<double>& scores, NodeId v, EdgeId e) {
  std::size_t below = 0;
  for (NodeId u : h.members(e)) {
    if (scores[u] < scores[v] || (scores[u] == scores[v] && u < v)) ++below;
  }
  return static_cast<int>(3 * below / h.edge_degree(e));
}

}  // namespace

TEST_CASE("rank labels follow within-edge score order") {
  SUBCASE("three members with increasing scores") {
    Hypergraph h(3, {{2, 0, 1}});
    const PairIndex idx = build_pair_index(h);
    const auto labels = rank_labels(h, idx, {0.1, 0.5, 0.9});
    for (PairId p = 0; p < idx.size(); ++p) CHECK(labels[p] == static_cast<int>(idx.node_of(p)));
  }
  SUBCASE("ties are broken by node id") {
    Hypergraph h(2, {{1, 0}});
    const PairIndex idx = build_pair_index(h);
    const auto labels = rank_labels(h, idx, {0.5, 0.5});
    CHECK(labels[*idx.find(0, 0)] == 0);
    CHECK(labels[*idx.find(1, 0)] == 1);
  }
  SUBCASE("random graphs against counting") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const Hypergraph h = random_hypergraph(30, 25, {2, 9}, 100 + trial);
      const PairIndex idx = build_pair_index(h);
      std::vector<double> scores(h.num_nodes());
      for (double& s : scores) s = std::floor(uniform01(rng) * 8.0);  // plenty of ties
      const auto labels = rank_labels(h, idx, scores);
      for (PairId p = 0; p < idx.size(); ++p) {
        REQUIRE(labels[p] == brute_rank_label(h, scores, idx.node_of(p), idx.edge_of(p)));
      }
    }
  }
  SUBCASE("dataset exposes the score and three classes") {
    const EncDataset ds = small_rank_dataset(3);
    CHECK(ds.classes == 3);
    CHECK(ds.features.cols() == 1);
    std::vector<double> scores(ds.features.col(0).data(), ds.features.col(0).data() + ds.features.rows());
    CHECK(rank_labels(ds.graph, ds.idx, scores) == ds.labels);
    const EncDataset noisy = make_rank_label_dataset(ds.graph, 3, {2});
    CHECK(noisy.features.cols() == 3);
    CHECK(noisy.features.col(0) == ds.features.col(0));
  }
  SUBCASE("singleton edges are rejected") {
    CHECK_THROWS_AS(make_rank_label_dataset(Hypergraph(3, {{0, 1}, {2}}), 0), ParameterError);
  }
}

TEST_CASE("outsider generator") {
  const Hypergraph h = random_hypergraph(60, 40, {2, 9}, 11);
  const Matrix features = Matrix::Random(60, 2);
  const EncDataset ds = make_outsider_dataset(h, features, 5, 7);
  std::vector<EdgeId> retained;
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    if (h.edge_degree(e) > 3) retained.push_back(e);
  }
  REQUIRE(ds.graph.num_edges() == 5 * retained.size());
  CHECK(ds.classes == 2);
  CHECK(ds.features == features);
  for (EdgeId g = 0; g < ds.graph.num_edges(); ++g) {
    const EdgeId source = retained[g / 5];
    const std::set<NodeId> original(h.members(source).begin(), h.members(source).end());
    REQUIRE(ds.graph.edge_degree(g) == h.edge_degree(source));
    std::size_t outsiders = 0;
    for (PairId p : ds.idx.edge_slice(g)) {
      const bool inside = original.count(ds.idx.node_of(p)) > 0;
      CHECK(ds.labels[p] == (inside ? 0 : 1));
      outsiders += inside ? 0 : 1;
    }
    CHECK(outsiders == h.edge_degree(source) / 2);
  }
  CHECK(check_invariants(ds.graph, ds.idx));

  SUBCASE("deterministic per seed") {
    const EncDataset again = make_outsider_dataset(h, features, 5, 7);
    CHECK(again.graph == ds.graph);
    CHECK(again.labels == ds.labels);
    CHECK(again.edge_split == ds.edge_split);
    CHECK_FALSE(make_outsider_dataset(h, features, 5, 8).graph == ds.graph);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(make_outsider_dataset(Hypergraph(5, {{0, 1, 2, 3, 4}}), Matrix::Zero(5, 1), 1, 0), ParameterError);
    CHECK_THROWS_AS(make_outsider_dataset(Hypergraph(8, {{0, 1, 2}}), Matrix::Zero(8, 1), 1, 0), ParameterError);
    CHECK_THROWS_AS(make_outsider_dataset(h, Matrix::Zero(3, 1), 1, 0), ShapeError);
  }
}

TEST_CASE("edge splits") {
  const auto split = split_edges(100, {0.6, 0.2}, 4);
  CHECK(std::count(split.begin(), split.end(), Split::Train) == 60);
  CHECK(std::count(split.begin(), split.end(), Split::Val) == 20);
  CHECK(std::count(split.begin(), split.end(), Split::Test) == 20);
  CHECK(split == split_edges(100, {0.6, 0.2}, 4));
  CHECK_THROWS_AS(split_edges(10, {0.9, 0.2}, 0), ParameterError);

  // every pair lives in exactly one split, through its edge
  const EncDataset ds = small_rank_dataset(9);
  std::vector<int> seen(ds.idx.size(), 0);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    for (EdgeId e : ds.edges_in(s)) {
      for (PairId p : ds.idx.edge_slice(e)) ++seen[p];
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("dataset directory round trip and loader errors") {
  TempDir dir("encds");
  const EncDataset ds = make_rank_label_dataset(random_hypergraph(20, 15, {2, 5}, 2), 2, {1});
  write_enc_dataset(ds, dir.path());
  const EncDataset back = load_enc_dataset(dir.path());
  CHECK(back.graph == ds.graph);
  CHECK(back.labels == ds.labels);
  CHECK(back.edge_split == ds.edge_split);
  CHECK(back.classes == ds.classes);
  CHECK(back.features == ds.features);

  SUBCASE("byte-identical rewrite") {
    TempDir other("encds2");
    write_enc_dataset(back, other.path());
    for (const char* f : {"edges.txt", "features.csv", "labels.csv", "splits.csv"}) {
      CHECK(read_text(dir / f) == read_text(other / f));
    }
  }
  SUBCASE("missing label names the pair") {
    std::string labels = read_text(dir / "labels.csv");
    const auto first_row = labels.find('\n') + 1;
    const std::string row = labels.substr(first_row, labels.find('\n', first_row) - first_row);
    labels.erase(first_row, row.size() + 1);
    write_text(dir / "labels.csv", labels);
    const auto comma = row.find(',');
    const std::string node = row.substr(0, comma);
    const std::string edge = row.substr(comma + 1, row.find(',', comma + 1) - comma - 1);
    try {
      load_enc_dataset(dir.path());
      FAIL("expected an error");
    } catch (const StructuralError& e) {
      CHECK(std::string(e.what()).find("node " + node + ", edge " + edge) != std::string::npos);
    }
  }
  SUBCASE("edge assigned twice") {
    write_text(dir / "splits.csv", read_text(dir / "splits.csv") + "0,test\n");
    CHECK_THROWS_AS(load_enc_dataset(dir.path()), StructuralError);
  }
  SUBCASE("unknown split name") {
    write_text(dir / "splits.csv", "edge_id,split\n0,holdout\n");
    CHECK_THROWS_AS(load_enc_dataset(dir.path()), ParseError);
  }
  SUBCASE("label on a non-member") {
    write_text(dir / "labels.csv", read_text(dir / "labels.csv") + "19,0,1\n");
    const bool member = ds.idx.find(19, 0).has_value();
    if (!member) CHECK_THROWS_AS(load_enc_dataset(dir.path()), StructuralError);
  }
}

TEST_CASE("sample_batch neighborhoods") {
  SUBCASE("low-degree node keeps all incident edges") {
    EncDataset ds;
    ds.graph = Hypergraph(4, {{0, 1}, {0, 2}, {0, 3}});
    ds.idx = build_pair_index(ds.graph);
    ds.features = Matrix::Zero(4, 1);
    ds.labels.assign(ds.idx.size(), 0);
    ds.classes = 1;
    ds.edge_split.assign(3, Split::Train);
    Rng rng(0);
    const Batch b = sample_batch(ds, {0}, 40, rng);
    CHECK(b.graph.num_edges() == 3);
    CHECK(b.graph.node_degree(0) == 3);
  }
  SUBCASE("hub of degree 100 keeps exactly 40") {
    const EncDataset ds = star_dataset(100);
    Rng rng(1);
    const Batch b = sample_batch(ds, {17}, 40, rng);
    REQUIRE(b.global_node[0] == 0);
    CHECK(b.graph.node_degree(0) == 40);
    CHECK(b.global_edge[0] == 17);
    CHECK(b.targets.size() == 2);
  }
  SUBCASE("more targets than the quota are all kept") {
    const EncDataset ds = star_dataset(10);
    Rng rng(1);
    const Batch b = sample_batch(ds, {0, 1, 2, 3, 4}, 3, rng);
    CHECK(b.graph.num_edges() == 5);
  }
  SUBCASE("closure, labels and determinism") {
    const EncDataset ds = make_rank_label_dataset(random_hypergraph(80, 200, {2, 6}, 4), 4);
    const std::vector<EdgeId> targets{3, 50, 7, 120};
    Rng a(9), b(9);
    const Batch x = sample_batch(ds, targets, 5, a);
    const Batch y = sample_batch(ds, targets, 5, b);
    CHECK(x.graph == y.graph);
    CHECK(x.global_edge == y.global_edge);
    for (EdgeId le = 0; le < x.graph.num_edges(); ++le) {
      const EdgeId ge = x.global_edge[le];
      std::vector<NodeId> mapped;
      for (NodeId v : x.graph.members(le)) mapped.push_back(x.global_node[v]);
      CHECK(std::equal(mapped.begin(), mapped.end(), ds.graph.members(ge).begin(), ds.graph.members(ge).end()));
    }
    for (std::size_t k = 0; k < x.targets.size(); ++k) {
      const PairId lp = x.targets[k], gp = x.target_global[k];
      CHECK(x.global_node[x.idx.node_of(lp)] == ds.idx.node_of(gp));
      CHECK(x.global_edge[x.idx.edge_of(lp)] == ds.idx.edge_of(gp));
      CHECK(x.labels[k] == ds.labels[gp]);
    }
    for (NodeId v = 0; v < x.graph.num_nodes(); ++v) {
      CHECK(x.features.row(v) == ds.features.row(x.global_node[v]));
    }
  }
  SUBCASE("errors") {
    const EncDataset ds = star_dataset(3);
    Rng rng(0);
    CHECK_THROWS_AS(sample_batch(ds, {}, 4, rng), ParameterError);
    CHECK_THROWS_AS(sample_batch(ds, {0, 0}, 4, rng), ParameterError);
    CHECK_THROWS_AS(sample_batch(ds, {9}, 4, rng), ParameterError);
  }
}

TEST_CASE("classification metrics") {
  SUBCASE("worked example") {
    const Metrics m = classification_metrics({0, 1, 1, 0}, {0, 1, 0, 0}, 2);
    CHECK(m.micro_f1 == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(m.per_class_f1[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(m.per_class_f1[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(m.macro_f1 == doctest::Approx((0.8 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  }
  SUBCASE("perfect and degenerate predictors") {
    const Metrics perfect = classification_metrics({2, 0, 1}, {2, 0, 1}, 3);
    CHECK(perfect.micro_f1 == 1.0);
    CHECK(perfect.macro_f1 == 1.0);
    const Metrics constant = classification_metrics({1, 1, 1, 1}, {0, 1, 0, 1}, 2);
    CHECK(constant.micro_f1 == 0.5);
    const Metrics absent = classification_metrics({0, 0}, {0, 0}, 2);
    CHECK(absent.per_class_f1[1] == 0.0);
    CHECK(absent.macro_f1 == 0.5);
  }
  SUBCASE("properties on random predictions") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const int classes = 2 + static_cast<int>(uniform_index(rng, 0, 3));
      const std::size_t n = 1 + uniform_index(rng, 0, 40);
      std::vector<int> preds(n), labels(n);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        preds[i] = static_cast<int>(uniform_index(rng, 0, static_cast<std::uint64_t>(classes - 1)));
        labels[i] = static_cast<int>(uniform_index(rng, 0, static_cast<std::uint64_t>(classes - 1)));
        correct += preds[i] == labels[i];
      }
      const Metrics m = classification_metrics(preds, labels, classes);
      CHECK(m.micro_f1 == doctest::Approx(static_cast<double>(correct) / static_cast<double>(n)).epsilon(1e-15));
      CHECK(m.macro_f1 >= 0.0);
      CHECK(m.macro_f1 <= 1.0);
      const auto perm = conhd::testing::random_permutation(rng, n);
      std::vector<int> p2(n), l2(n);
      for (std::size_t i = 0; i < n; ++i) {
        p2[i] = preds[perm[i]];
        l2[i] = labels[perm[i]];
      }
      const Metrics m2 = classification_metrics(p2, l2, classes);
      CHECK(m2.micro_f1 == doctest::Approx(m.micro_f1).epsilon(1e-15));
      CHECK(m2.macro_f1 == doctest::Approx(m.macro_f1).epsilon(1e-15));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(classification_metrics({0}, {0, 1}, 2), ShapeError);
    CHECK_THROWS_AS(classification_metrics({}, {}, 2), ParameterError);
    CHECK_THROWS_AS(classification_metrics({3}, {0}, 2), ParameterError);
  }
  SUBCASE("json report") {
    const auto j = nlohmann::json::parse(metrics_json(classification_metrics({0, 1}, {0, 1}, 2), std::nullopt));
    CHECK(j["micro_f1"] == 1.0);
    CHECK(j["mae"].is_null());
    CHECK(j["per_class_f1"].size() == 2);
    const auto r = nlohmann::json::parse(metrics_json(std::nullopt, 0.25));
    CHECK(r["mae"] == 0.25);
    CHECK(r["micro_f1"].is_null());
  }
}

TEST_CASE("training loop") {
  const EncDataset ds = small_rank_dataset(1);
  const nn::ModelConfig cfg = small_model(1, 3);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_edges = 8;
  tc.seed = 5;

  SUBCASE("lr = 0 leaves parameters and loss unchanged") {
    tc.lr = 0.0;
    const TrainResult r = train(ds, cfg, tc);
    const nn::ParameterStore init = nn::init_parameters(cfg, derive_seed(tc.seed, "encpipe.train.init"));
    for (const auto& [name, p] : init) CHECK(r.best.get(name).value == p.value);
    for (const LogRow& row : r.log) {
      const LogRow& first = row.split == "train" ? r.log[0] : r.log[1];
      CHECK(row.loss == first.loss);
      CHECK(row.micro_f1 == first.micro_f1);
    }
    CHECK(r.epochs_run == 3);
  }
  SUBCASE("seeded runs give identical logs") {
    tc.lr = 1e-2;
    const TrainResult a = train(ds, cfg, tc);
    const TrainResult b = train(ds, cfg, tc);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].loss == b.log[i].loss);
      CHECK(a.log[i].micro_f1 == b.log[i].micro_f1);
    }
    CHECK(a.best_val_micro_f1 == evaluate(ds, cfg, const_cast<nn::ParameterStore&>(a.best), Split::Val, 8, 5).micro_f1);
  }
  SUBCASE("training lowers the loss") {
    tc.lr = 1e-2;
    tc.epochs = 15;
    tc.patience = 100;
    const TrainResult r = train(ds, cfg, tc);
    CHECK(r.log[r.log.size() - 2].loss < r.log[0].loss);
  }
  SUBCASE("early stopping honours patience") {
    tc.lr = 0.0;
    tc.epochs = 50;
    tc.patience = 4;
    const TrainResult r = train(ds, cfg, tc);
    CHECK(r.epochs_run == 4);
    CHECK(r.best_epoch == 0);
  }
  SUBCASE("log file") {
    TempDir dir("trainlog");
    write_train_log(train(ds, cfg, tc).log, dir / "log.csv");
    const CsvTable t = read_csv(dir / "log.csv", {"epoch", "split", "loss", "micro_f1", "macro_f1"});
    CHECK(t.rows.size() == 8);
  }
  SUBCASE("incompatible configurations") {
    CHECK_THROWS_AS(train(ds, small_model(2, 3), tc), ParameterError);
    CHECK_THROWS_AS(train(ds, small_model(1, 2), tc), ParameterError);
  }
}

TEST_CASE("evaluation") {
  EncDataset ds = small_rank_dataset(2);
  const nn::ModelConfig cfg = small_model(1, 3);
  nn::ParameterStore store = nn::init_parameters(cfg, 1);
  SUBCASE("batched evaluation matches the full-graph forward when nothing is sampled away") {
    const Metrics m = evaluate(ds, cfg, store, Split::Test, 1000, 0);
    const auto preds = predict_all(ds, cfg, store);
    std::vector<int> p, l;
    for (EdgeId e : ds.edges_in(Split::Test)) {
      for (PairId q : ds.idx.edge_slice(e)) {
        p.push_back(preds[q]);
        l.push_back(ds.labels[q]);
      }
    }
    CHECK(m.micro_f1 == classification_metrics(p, l, 3).micro_f1);
    CHECK(m.count == l.size());
  }
  SUBCASE("empty split") {
    std::fill(ds.edge_split.begin(), ds.edge_split.end(), Split::Train);
    CHECK_THROWS_AS(evaluate(ds, cfg, store, Split::Test), ParameterError);
  }
}

TEST_CASE("embedding export") {
  const EncDataset ds = small_rank_dataset(6);
  const nn::ModelConfig cfg = small_model(1, 3);
  nn::ParameterStore store = nn::init_parameters(cfg, 2);
  TempDir dir("export");
  nn::Tape tape;
  const Matrix h = nn::conhd_forward(tape, store, cfg, nn::build_structure(ds.idx), ds.features, {}).value();

  const std::size_t all = export_embeddings(ds, cfg, store, {}, dir / "all.csv");
  CHECK(all == ds.idx.size());
  const CsvTable t = read_csv(dir / "all.csv", {"node_id", "edge_id", "label"});
  CHECK(t.header.size() == static_cast<std::size_t>(cfg.d) + 3);
  double worst = 0.0;
  for (const auto& row : t.rows) {
    const auto p = ds.idx.find(static_cast<NodeId>(parse_integer(row[0])), static_cast<EdgeId>(parse_integer(row[1])));
    REQUIRE(p);
    CHECK(parse_integer(row[2]) == ds.labels[*p]);
    for (int c = 0; c < cfg.d; ++c) {
      worst = std::max(worst, std::abs(parse_double(row[static_cast<std::size_t>(c) + 3]) - h(*p, c)));
    }
  }
  CHECK(worst <= 1e-12);

  NodeId busiest = 0;
  for (NodeId v = 0; v < ds.graph.num_nodes(); ++v) {
    if (ds.graph.node_degree(v) > ds.graph.node_degree(busiest)) busiest = v;
  }
  PairFilter by_node;
  by_node.node = busiest;
  CHECK(export_embeddings(ds, cfg, store, by_node, dir / "node.csv") == ds.graph.node_degree(busiest));
  PairFilter by_edge;
  by_edge.edge = 0;
  CHECK(export_embeddings(ds, cfg, store, by_edge, dir / "edge.csv") == ds.graph.edge_degree(0));
  PairFilter nothing;
  nothing.node = 0;
  nothing.edge = 0;
  if (!ds.idx.find(0, 0)) {
    CHECK(export_embeddings(ds, cfg, store, nothing, dir / "none.csv") == 0);
    CHECK(read_csv(dir / "none.csv", {"node_id"}).rows.empty());
  }
}

TEST_CASE("diffusion approximation protocol") {
  const Hypergraph h = random_hypergraph(20, 15, {2, 5}, 3);
  const PairIndex idx = build_pair_index(h);
  nn::ModelConfig cfg = small_model(1, 1);
  const auto samples = generate_semisynthetic(h, idx, RegKind::CE, 10, 4);

  SUBCASE("identity-initialised model reproduces the baseline") {
    nn::ParameterStore store = nn::init_parameters(cfg, 0);
    nn::init_identity(cfg, store);
    CHECK(std::abs(approx_mae(h, idx, cfg, store, samples) - identity_mae(samples)) <= 1e-10);
    ApproxConfig ac;
    ac.samples = 10;
    ac.val_samples = 2;
    ac.test_samples = 2;
    ac.epochs = 0;
    ac.init_identity = true;
    const ApproxReport r = approx_train(h, idx, samples, cfg, ac);
    CHECK(std::abs(r.test_mae - r.identity_mae) <= 1e-10);
  }
  SUBCASE("constant features give a zero baseline") {
    SemisyntheticSample s;
    s.node_features = Matrix::Constant(20, 1, 3.0);
    s.h0 = Matrix::Constant(static_cast<Eigen::Index>(idx.size()), 1, 3.0);
    s.h2 = run_diffusion(h, idx, s.h0, semisynthetic_config(RegKind::CE)).final_state.h;
    CHECK(identity_mae({s}) <= 1e-12);
  }
  SUBCASE("training improves on the starting point") {
    ApproxConfig ac;
    ac.samples = 10;
    ac.val_samples = 2;
    ac.test_samples = 2;
    ac.epochs = 5;
    ac.lr = 1e-2;
    ac.seed = 1;
    const ApproxReport r = approx_experiment(h, RegKind::CE, cfg, ac);
    CHECK(r.epochs_run == 5);
    CHECK(r.val_curve.size() == 6);
    CHECK(r.best_val_mae <= r.val_curve.front().second);
    const ApproxReport again = approx_experiment(h, RegKind::CE, cfg, ac);
    CHECK(again.test_mae == r.test_mae);
  }
  SUBCASE("bad sample counts") {
    ApproxConfig ac;
    ac.val_samples = 5;
    ac.test_samples = 5;
    CHECK_THROWS_AS(approx_train(h, idx, samples, cfg, ac), ParameterError);
    CHECK_THROWS_AS(approx_train(h, idx, samples, small_model(1, 2), ApproxConfig{}), ParameterError);
  }
}
