#include "conhd/encpipe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <unordered_map>

#include "conhd/errors.hpp"
#include "conhd/io_util.hpp"
#include "json.hpp"

namespace conhd::enc {

using nn::Index;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ParseError("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

void EncDataset::validate() const {
  if (idx.size() != graph.num_pairs()) throw StructuralError("pair index does not match the hypergraph");
  if (labels.size() != idx.size()) throw StructuralError("every pair needs exactly one label");
  if (classes < 1) throw StructuralError("class count must be positive");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw StructuralError("label " + std::to_string(y) + " outside [0, classes)");
  }
  if (edge_split.size() != graph.num_edges()) throw StructuralError("every edge needs exactly one split");
  if (features.rows() != static_cast<Index>(graph.num_nodes())) throw ShapeError("one feature row per node required");
}

std::vector<EdgeId> EncDataset::edges_in(Split split) const {
  std::vector<EdgeId> out;
  for (EdgeId e = 0; e < edge_split.size(); ++e) {
    if (edge_split[e] == split) out.push_back(e);
  }
  return out;
}

EncDataset load_enc_dataset(const std::filesystem::path& dir) {
  EncDataset ds;
  const LoadedHypergraph lh = load_hypergraph(dir / "edges.txt");
  ds.graph = lh.graph;
  ds.idx = build_pair_index(ds.graph);
  std::unordered_map<long long, NodeId> dense;
  for (std::size_t i = 0; i < lh.original_ids.size(); ++i) dense[lh.original_ids[i]] = static_cast<NodeId>(i);
  auto node_of = [&](const std::string& text, const std::string& file, std::size_t line) {
    const long long id = parse_integer(text);
    auto it = dense.find(id);
    if (it == dense.end()) throw ParseError(file + " line " + std::to_string(line) + ": unknown node " + text);
    return it->second;
  };
  const std::size_t n = ds.graph.num_nodes();
  const std::size_t m = ds.graph.num_edges();

  const CsvTable feats = read_csv(dir / "features.csv", {"node_id"});
  const auto f = static_cast<Index>(feats.header.size()) - 1;
  if (f < 1) throw ParseError("features.csv has no feature columns");
  ds.features = Matrix::Zero(static_cast<Index>(n), f);
  std::vector<bool> seen(n, false);
  for (std::size_t r = 0; r < feats.rows.size(); ++r) {
    const NodeId v = node_of(feats.rows[r][0], "features.csv", feats.line_numbers[r]);
    if (seen[v]) throw ParseError("features.csv line " + std::to_string(feats.line_numbers[r]) + ": duplicate node");
    seen[v] = true;
    for (Index c = 0; c < f; ++c) ds.features(v, c) = parse_double(feats.rows[r][static_cast<std::size_t>(c) + 1]);
  }
  for (NodeId v = 0; v < n; ++v) {
    if (!seen[v]) throw ParseError("features.csv: no row for node " + std::to_string(lh.original_ids[v]));
  }

  const CsvTable labs = read_csv(dir / "labels.csv", {"node_id", "edge_id", "label"});
  std::vector<int> labels(ds.idx.size(), -1);
  int max_label = -1;
  for (std::size_t r = 0; r < labs.rows.size(); ++r) {
    const std::string where = "labels.csv line " + std::to_string(labs.line_numbers[r]);
    const NodeId v = node_of(labs.rows[r][0], "labels.csv", labs.line_numbers[r]);
    const long long e = parse_integer(labs.rows[r][1]);
    if (e < 0 || static_cast<std::size_t>(e) >= m) throw ParseError(where + ": edge id out of range");
    const auto p = ds.idx.find(v, static_cast<EdgeId>(e));
    if (!p) throw StructuralError(where + ": node " + labs.rows[r][0] + " is not a member of edge " + labs.rows[r][1]);
    if (labels[*p] != -1) throw StructuralError(where + ": duplicate label");
    const long long y = parse_integer(labs.rows[r][2]);
    if (y < 0 || y > 1'000'000) throw ParseError(where + ": label out of range");
    labels[*p] = static_cast<int>(y);
    max_label = std::max(max_label, static_cast<int>(y));
  }
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == -1) {
      const auto pid = static_cast<PairId>(p);
      throw StructuralError("labels.csv: missing label for pair (node " +
                            std::to_string(lh.original_ids[ds.idx.node_of(pid)]) + ", edge " +
                            std::to_string(ds.idx.edge_of(pid)) + ")");
    }
  }
  ds.labels = std::move(labels);
  ds.classes = max_label + 1;

  const CsvTable splits = read_csv(dir / "splits.csv", {"edge_id", "split"});
  std::vector<std::optional<Split>> assigned(m);
  for (std::size_t r = 0; r < splits.rows.size(); ++r) {
    const std::string where = "splits.csv line " + std::to_string(splits.line_numbers[r]);
    const long long e = parse_integer(splits.rows[r][0]);
    if (e < 0 || static_cast<std::size_t>(e) >= m) throw ParseError(where + ": edge id out of range");
    if (assigned[static_cast<std::size_t>(e)]) {
      throw StructuralError(where + ": edge " + splits.rows[r][0] + " is assigned to more than one split");
    }
    assigned[static_cast<std::size_t>(e)] = parse_split(splits.rows[r][1]);
  }
  ds.edge_split.resize(m);
  for (std::size_t e = 0; e < m; ++e) {
    if (!assigned[e]) throw StructuralError("splits.csv: edge " + std::to_string(e) + " has no split");
    ds.edge_split[e] = *assigned[e];
  }
  ds.validate();
  return ds;
}

void write_enc_dataset(const EncDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  write_hypergraph(ds.graph, dir / "edges.txt");
  {
    auto out = open_for_write(dir / "features.csv");
    out << "node_id";
    for (Index c = 0; c < ds.features.cols(); ++c) out << ",x_" << c + 1;
    out << '\n';
    for (Index v = 0; v < ds.features.rows(); ++v) {
      out << v;
      for (Index c = 0; c < ds.features.cols(); ++c) out << ',' << format_double(ds.features(v, c));
      out << '\n';
    }
  }
  {
    auto out = open_for_write(dir / "labels.csv");
    out << "node_id,edge_id,label\n";
    for (std::size_t p = 0; p < ds.idx.size(); ++p) {
      const auto pid = static_cast<PairId>(p);
      out << ds.idx.node_of(pid) << ',' << ds.idx.edge_of(pid) << ',' << ds.labels[p] << '\n';
    }
  }
  {
    auto out = open_for_write(dir / "splits.csv");
    out << "edge_id,split\n";
    for (std::size_t e = 0; e < ds.edge_split.size(); ++e) out << e << ',' << to_string(ds.edge_split[e]) << '\n';
  }
}

std::vector<Split> split_edges(std::size_t num_edges, SplitFractions fractions, std::uint64_t seed) {
  if (fractions.train < 0.0 || fractions.val < 0.0 || fractions.train + fractions.val > 1.0) {
    throw ParameterError("split fractions must be non-negative and sum to at most 1");
  }
  Rng rng = make_rng(seed, "encpipe.split");
  std::vector<EdgeId> order(num_edges);
  std::iota(order.begin(), order.end(), EdgeId{0});
  for (std::size_t i = num_edges; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, 0, i - 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(num_edges)));
  const auto n_val = std::min(num_edges - n_train,
                              static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(num_edges))));
  std::vector<Split> out(num_edges, Split::Test);
  for (std::size_t i = 0; i < n_train; ++i) out[order[i]] = Split::Train;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) out[order[i]] = Split::Val;
  return out;
}

namespace {

// First k entries of a uniformly shuffled copy of pool.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[uniform_index(rng, i, pool.size() - 1)]);
  pool.resize(k);
  return pool;
}

}  // namespace

EncDataset make_outsider_dataset(const Hypergraph& h, const Matrix& features, std::size_t variants,
                                 std::uint64_t seed, SplitFractions fractions) {
  if (variants < 1) throw ParameterError("variants must be >= 1");
  if (features.rows() != static_cast<Index>(h.num_nodes())) throw ShapeError("one feature row per node required");
  Rng rng = make_rng(seed, "encpipe.outsider");
  std::vector<std::vector<NodeId>> edges;
  std::vector<int> labels;
  std::vector<bool> member(h.num_nodes(), false);
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    const auto members = h.members(e);
    const std::size_t de = members.size();
    if (de <= 3) continue;
    const std::size_t swaps = de / 2;
    for (NodeId v : members) member[v] = true;
    std::vector<NodeId> outside;
    for (NodeId v = 0; v < h.num_nodes(); ++v) {
      if (!member[v]) outside.push_back(v);
    }
    for (NodeId v : members) member[v] = false;
    if (outside.size() < swaps) {
      throw ParameterError("edge " + std::to_string(e) + " has too few non-member nodes to draw outsiders from");
    }
    std::vector<std::size_t> positions(de);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    for (std::size_t variant = 0; variant < variants; ++variant) {
      const auto chosen = sample_without_replacement(positions, swaps, rng);
      const auto incoming = sample_without_replacement(outside, swaps, rng);
      std::vector<NodeId> edge(members.begin(), members.end());
      std::vector<int> edge_labels(de, 0);
      for (std::size_t i = 0; i < swaps; ++i) {
        edge[chosen[i]] = incoming[i];
        edge_labels[chosen[i]] = 1;
      }
      edges.push_back(std::move(edge));
      labels.insert(labels.end(), edge_labels.begin(), edge_labels.end());
    }
  }
  if (edges.empty()) throw ParameterError("no edge has degree above 3");
  EncDataset ds;
  ds.graph = Hypergraph(h.num_nodes(), std::move(edges));
  ds.idx = build_pair_index(ds.graph);
  ds.features = features;
  ds.labels = std::move(labels);
  ds.classes = 2;
  ds.edge_split = split_edges(ds.graph.num_edges(), fractions, derive_seed(seed, "encpipe.outsider.split"));
  ds.validate();
  return ds;
}

std::vector<int> rank_labels(const Hypergraph& h, const PairIndex& idx, const std::vector<double>& scores) {
  if (scores.size() != h.num_nodes()) throw ShapeError("one score per node required");
  std::vector<int> labels(idx.size(), 0);
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    const auto slice = idx.edge_slice(e);
    std::vector<PairId> order(slice.begin(), slice.end());
    std::sort(order.begin(), order.end(), [&](PairId a, PairId b) {
      const NodeId va = idx.node_of(a), vb = idx.node_of(b);
      return scores[va] != scores[vb] ? scores[va] < scores[vb] : va < vb;
    });
    const std::size_t de = order.size();
    for (std::size_t r = 0; r < de; ++r) labels[order[r]] = static_cast<int>((3 * r) / de);
  }
  return labels;
}

EncDataset make_rank_label_dataset(const Hypergraph& h, std::uint64_t seed, RankLabelOptions options,
                                   SplitFractions fractions) {
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    if (h.edge_degree(e) < 2) throw ParameterError("rank labels need edges of size >= 2");
  }
  if (options.noise_features < 0) throw ParameterError("noise_features must be >= 0");
  Rng rng = make_rng(seed, "encpipe.rank_label");
  std::vector<double> scores(h.num_nodes());
  for (double& s : scores) s = uniform01(rng);
  EncDataset ds;
  ds.graph = h;
  ds.idx = build_pair_index(h);
  ds.features = Matrix(static_cast<Index>(h.num_nodes()), 1 + options.noise_features);
  for (Index v = 0; v < ds.features.rows(); ++v) {
    ds.features(v, 0) = scores[static_cast<std::size_t>(v)];
    for (Index c = 1; c < ds.features.cols(); ++c) ds.features(v, c) = standard_normal(rng);
  }
  ds.labels = rank_labels(h, ds.idx, scores);
  ds.classes = 3;
  ds.edge_split = split_edges(h.num_edges(), fractions, derive_seed(seed, "encpipe.rank_label.split"));
  ds.validate();
  return ds;
}

Batch sample_batch(const EncDataset& ds, const std::vector<EdgeId>& edge_ids, std::size_t neighbor_sample, Rng& rng) {
  if (edge_ids.empty()) throw ParameterError("sample_batch needs at least one edge");
  const Hypergraph& g = ds.graph;
  std::vector<bool> is_target(g.num_edges(), false);
  for (EdgeId e : edge_ids) {
    if (e >= g.num_edges()) throw ParameterError("edge id out of range in batch");
    if (is_target[e]) throw ParameterError("duplicate edge in batch");
    is_target[e] = true;
  }
  std::vector<NodeId> centers;
  for (EdgeId e : edge_ids) centers.insert(centers.end(), g.members(e).begin(), g.members(e).end());
  std::sort(centers.begin(), centers.end());
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());

  std::vector<bool> included(g.num_edges(), false);
  std::vector<EdgeId> extra;
  for (NodeId v : centers) {
    std::vector<EdgeId> others;
    std::size_t targets_here = 0;
    for (EdgeId e : g.incident(v)) {
      if (is_target[e]) {
        ++targets_here;
      } else {
        others.push_back(e);
      }
    }
    const std::size_t room = neighbor_sample > targets_here ? neighbor_sample - targets_here : 0;
    const auto picked = others.size() <= room ? others : sample_without_replacement(others, room, rng);
    for (EdgeId e : picked) {
      if (!included[e]) {
        included[e] = true;
        extra.push_back(e);
      }
    }
  }
  std::sort(extra.begin(), extra.end());

  Batch b;
  b.global_edge = edge_ids;
  b.global_edge.insert(b.global_edge.end(), extra.begin(), extra.end());
  for (EdgeId e : b.global_edge) b.global_node.insert(b.global_node.end(), g.members(e).begin(), g.members(e).end());
  std::sort(b.global_node.begin(), b.global_node.end());
  b.global_node.erase(std::unique(b.global_node.begin(), b.global_node.end()), b.global_node.end());
  std::unordered_map<NodeId, NodeId> local;
  for (std::size_t i = 0; i < b.global_node.size(); ++i) local[b.global_node[i]] = static_cast<NodeId>(i);

  std::vector<std::vector<NodeId>> members;
  members.reserve(b.global_edge.size());
  for (EdgeId e : b.global_edge) {
    std::vector<NodeId> edge;
    for (NodeId v : g.members(e)) edge.push_back(local.at(v));
    members.push_back(std::move(edge));
  }
  b.graph = Hypergraph(b.global_node.size(), std::move(members));
  b.idx = build_pair_index(b.graph);
  b.features.resize(static_cast<Index>(b.global_node.size()), ds.features.cols());
  for (std::size_t i = 0; i < b.global_node.size(); ++i) {
    b.features.row(static_cast<Index>(i)) = ds.features.row(b.global_node[i]);
  }
  // targets come first, so their local pairs are a prefix in edge order
  for (std::size_t k = 0; k < edge_ids.size(); ++k) {
    const auto local_slice = b.idx.edge_slice(static_cast<EdgeId>(k));
    const auto global_slice = ds.idx.edge_slice(edge_ids[k]);
    for (std::size_t i = 0; i < local_slice.size(); ++i) {
      b.targets.push_back(local_slice[i]);
      b.target_global.push_back(global_slice[i]);
      b.labels.push_back(ds.labels[global_slice[i]]);
    }
  }
  return b;
}

Metrics classification_metrics(const std::vector<int>& predictions, const std::vector<int>& labels, int classes) {
  if (predictions.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
  if (labels.empty()) throw ParameterError("metrics need at least one example");
  std::vector<double> tp(static_cast<std::size_t>(classes), 0.0), fp(tp), fn(tp);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if (p < 0 || p >= classes || y < 0 || y >= classes) throw ParameterError("class index out of range");
    if (p == y) {
      ++correct;
      tp[static_cast<std::size_t>(p)] += 1.0;
    } else {
      fp[static_cast<std::size_t>(p)] += 1.0;
      fn[static_cast<std::size_t>(y)] += 1.0;
    }
  }
  Metrics m;
  m.count = labels.size();
  m.micro_f1 = static_cast<double>(correct) / static_cast<double>(labels.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    const double f1 = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
    m.per_class_f1.push_back(f1);
    sum += f1;
  }
  m.macro_f1 = sum / static_cast<double>(classes);
  return m;
}

namespace {

int argmax_row(const Matrix& m, Index r) {
  Index best = 0;
  for (Index c = 1; c < m.cols(); ++c) {
    if (m(r, c) > m(r, best)) best = c;
  }
  return static_cast<int>(best);
}

struct BatchOutput {
  nn::Var logits;
  nn::Var loss;
};

BatchOutput batch_forward(nn::Tape& tape, nn::ParameterStore& store, const nn::ModelConfig& cfg, const Batch& b,
                          const nn::ForwardContext& ctx) {
  const nn::Structure st = nn::build_structure(b.idx);
  const nn::Var h = nn::conhd_forward(tape, store, cfg, st, b.features, ctx);
  auto rows = std::make_shared<std::vector<Index>>(b.targets.begin(), b.targets.end());
  const nn::Var logits = nn::gather_rows(nn::classify_head(tape, store, cfg, h), rows);
  return {logits, nn::cross_entropy(logits, b.labels)};
}

void check_compatible(const EncDataset& ds, const nn::ModelConfig& cfg) {
  if (cfg.in_features != ds.features.cols()) {
    throw ParameterError("model expects " + std::to_string(cfg.in_features) + " features, dataset has " +
                         std::to_string(ds.features.cols()));
  }
  if (cfg.classes != ds.classes) {
    throw ParameterError("model has " + std::to_string(cfg.classes) + " classes, dataset has " +
                         std::to_string(ds.classes));
  }
}

}  // namespace

Metrics evaluate(const EncDataset& ds, const nn::ModelConfig& cfg, nn::ParameterStore& store, Split split,
                 std::size_t batch_edges, std::uint64_t seed) {
  check_compatible(ds, cfg);
  const std::vector<EdgeId> edges = ds.edges_in(split);
  if (edges.empty()) throw ParameterError("split '" + to_string(split) + "' has no edges");
  if (batch_edges < 1) throw ParameterError("batch_edges must be >= 1");
  Rng rng = make_rng(seed, "encpipe.evaluate." + to_string(split));
  std::vector<int> preds, labels;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < edges.size(); start += batch_edges) {
    const std::vector<EdgeId> chunk(edges.begin() + static_cast<std::ptrdiff_t>(start),
                                    edges.begin() + static_cast<std::ptrdiff_t>(std::min(edges.size(), start + batch_edges)));
    const Batch b = sample_batch(ds, chunk, static_cast<std::size_t>(cfg.neighbor_sample), rng);
    nn::Tape tape;
    const BatchOutput out = batch_forward(tape, store, cfg, b, {});
    const Matrix& z = out.logits.value();
    for (Index r = 0; r < z.rows(); ++r) preds.push_back(argmax_row(z, r));
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    loss_sum += out.loss.value()(0, 0) * static_cast<double>(b.labels.size());
  }
  Metrics m = classification_metrics(preds, labels, ds.classes);
  m.loss = loss_sum / static_cast<double>(labels.size());
  return m;
}

std::vector<int> predict_all(const EncDataset& ds, const nn::ModelConfig& cfg, nn::ParameterStore& store) {
  check_compatible(ds, cfg);
  nn::Tape tape;
  const nn::Structure st = nn::build_structure(ds.idx);
  const Matrix z = nn::classify_head(tape, store, cfg, nn::conhd_forward(tape, store, cfg, st, ds.features, {})).value();
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Index r = 0; r < z.rows(); ++r) out[static_cast<std::size_t>(r)] = argmax_row(z, r);
  return out;
}

TrainResult train(const EncDataset& ds, const nn::ModelConfig& cfg, const TrainConfig& tc) {
  cfg.validate();
  check_compatible(ds, cfg);
  if (tc.epochs < 0 || tc.patience < 1 || tc.batch_edges < 1) throw ParameterError("invalid training configuration");
  std::vector<EdgeId> train_edges = ds.edges_in(Split::Train);
  if (train_edges.empty()) throw ParameterError("no training edges");

  TrainResult result;
  result.cfg = cfg;
  nn::ParameterStore store = nn::init_parameters(cfg, derive_seed(tc.seed, "encpipe.train.init"));
  nn::Adam adam(tc.lr);
  Rng shuffle_rng = make_rng(tc.seed, "encpipe.train.shuffle");
  Rng sample_rng = make_rng(tc.seed, "encpipe.train.sample");
  Rng dropout_rng = make_rng(tc.seed, "encpipe.train.dropout");

  auto record = [&](int epoch) {
    const Metrics tr = evaluate(ds, cfg, store, Split::Train, tc.batch_edges, tc.seed);
    const Metrics va = evaluate(ds, cfg, store, Split::Val, tc.batch_edges, tc.seed);
    result.log.push_back({epoch, "train", tr.loss, tr.micro_f1, tr.macro_f1});
    result.log.push_back({epoch, "val", va.loss, va.micro_f1, va.macro_f1});
    return va.micro_f1;
  };

  result.best_val_micro_f1 = record(0);
  result.best = store;
  int stale = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (std::size_t i = train_edges.size(); i > 1; --i) {
      std::swap(train_edges[i - 1], train_edges[uniform_index(shuffle_rng, 0, i - 1)]);
    }
    for (std::size_t start = 0; start < train_edges.size(); start += tc.batch_edges) {
      const std::vector<EdgeId> chunk(
          train_edges.begin() + static_cast<std::ptrdiff_t>(start),
          train_edges.begin() + static_cast<std::ptrdiff_t>(std::min(train_edges.size(), start + tc.batch_edges)));
      const Batch b = sample_batch(ds, chunk, static_cast<std::size_t>(cfg.neighbor_sample), sample_rng);
      nn::Tape tape;
      const BatchOutput out = batch_forward(tape, store, cfg, b, {true, &dropout_rng});
      tape.backward(out.loss, store);
      adam.step(store);
    }
    result.epochs_run = epoch;
    const double val = record(epoch);
    if (val > result.best_val_micro_f1 + tc.min_delta) {
      result.best_val_micro_f1 = val;
      result.best_epoch = epoch;
      result.best = store;
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
  }
  return result;
}

void write_train_log(const std::vector<LogRow>& log, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "epoch,split,loss,micro_f1,macro_f1\n";
  for (const LogRow& r : log) {
    out << r.epoch << ',' << r.split << ',' << format_double(r.loss) << ',' << format_double(r.micro_f1) << ','
        << format_double(r.macro_f1) << '\n';
  }
}

std::string metrics_json(const std::optional<Metrics>& classification, std::optional<double> mae) {
  nlohmann::ordered_json j;
  j["micro_f1"] = classification ? nlohmann::ordered_json(classification->micro_f1) : nullptr;
  j["macro_f1"] = classification ? nlohmann::ordered_json(classification->macro_f1) : nullptr;
  j["mae"] = mae ? nlohmann::ordered_json(*mae) : nullptr;
  j["per_class_f1"] = classification ? nlohmann::ordered_json(classification->per_class_f1) : nullptr;
  if (classification) {
    j["loss"] = classification->loss;
    j["count"] = classification->count;
  }
  return j.dump(2);
}

std::size_t export_embeddings(const EncDataset& ds, const nn::ModelConfig& cfg, nn::ParameterStore& store,
                              const PairFilter& filter, const std::filesystem::path& path) {
  nn::Tape tape;
  const nn::Structure st = nn::build_structure(ds.idx);
  const Matrix h = nn::conhd_forward(tape, store, cfg, st, ds.features, {}).value();
  auto out = open_for_write(path);
  out << "node_id,edge_id,label";
  for (Index c = 0; c < h.cols(); ++c) out << ",h_" << c + 1;
  out << '\n';
  std::size_t rows = 0;
  for (std::size_t p = 0; p < ds.idx.size(); ++p) {
    const auto pid = static_cast<PairId>(p);
    const NodeId v = ds.idx.node_of(pid);
    const EdgeId e = ds.idx.edge_of(pid);
    if ((filter.node && *filter.node != v) || (filter.edge && *filter.edge != e)) continue;
    out << v << ',' << e << ',' << ds.labels[p];
    for (Index c = 0; c < h.cols(); ++c) out << ',' << format_double(h(static_cast<Index>(p), c));
    out << '\n';
    ++rows;
  }
  if (rows == 0) std::cerr << "warning: embedding filter matched no pairs; wrote header only\n";
  return rows;
}

double approx_mae(const Hypergraph& h, const PairIndex& idx, const nn::ModelConfig& cfg, nn::ParameterStore& store,
                  const std::vector<SemisyntheticSample>& samples) {
  if (samples.empty()) throw ParameterError("no samples to evaluate");
  (void)h;
  const nn::Structure st = nn::build_structure(idx);
  double total = 0.0;
  for (const auto& s : samples) {
    nn::Tape tape;
    const nn::Var pred = nn::classify_head(tape, store, cfg, nn::conhd_forward(tape, store, cfg, st, s.node_features, {}));
    total += nn::mae(pred, s.h2).value()(0, 0);
  }
  return total / static_cast<double>(samples.size());
}

double identity_mae(const std::vector<SemisyntheticSample>& samples) {
  if (samples.empty()) throw ParameterError("no samples to evaluate");
  double total = 0.0;
  for (const auto& s : samples) total += (s.h0 - s.h2).cwiseAbs().mean();
  return total / static_cast<double>(samples.size());
}

ApproxReport approx_train(const Hypergraph& h, const PairIndex& idx, const std::vector<SemisyntheticSample>& samples,
                          const nn::ModelConfig& cfg, const ApproxConfig& ac) {
  cfg.validate();
  if (cfg.classes != 1 || cfg.in_features != 1) throw ParameterError("approximation models need one input and one output");
  if (ac.val_samples < 1 || ac.test_samples < 1 || samples.size() <= ac.val_samples + ac.test_samples) {
    throw ParameterError("sample counts leave no training data");
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  const std::size_t n_train = samples.size() - ac.val_samples - ac.test_samples;
  const std::vector<SemisyntheticSample> train_set(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<SemisyntheticSample> val_set(samples.begin() + static_cast<std::ptrdiff_t>(n_train),
                                                 samples.begin() + static_cast<std::ptrdiff_t>(n_train + ac.val_samples));
  const std::vector<SemisyntheticSample> test_set(samples.begin() + static_cast<std::ptrdiff_t>(n_train + ac.val_samples),
                                                  samples.end());

  nn::ParameterStore store = nn::init_parameters(cfg, derive_seed(ac.seed, "encpipe.approx.init"));
  if (ac.init_identity) nn::init_identity(cfg, store);
  nn::Adam adam(ac.lr);
  Rng shuffle_rng = make_rng(ac.seed, "encpipe.approx.shuffle");
  Rng dropout_rng = make_rng(ac.seed, "encpipe.approx.dropout");
  const nn::Structure st = nn::build_structure(idx);

  ApproxReport report;
  report.best_val_mae = approx_mae(h, idx, cfg, store, val_set);
  report.val_curve.emplace_back(0, report.best_val_mae);
  nn::ParameterStore best = store;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  int stale = 0;
  for (int epoch = 1; epoch <= ac.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, 0, i - 1)]);
    for (std::size_t i : order) {
      nn::Tape tape;
      const nn::Var hL = nn::conhd_forward(tape, store, cfg, st, train_set[i].node_features, {true, &dropout_rng});
      const nn::Var loss = nn::mae(nn::classify_head(tape, store, cfg, hL), train_set[i].h2);
      tape.backward(loss, store);
      adam.step(store);
    }
    report.epochs_run = epoch;
    const double val = approx_mae(h, idx, cfg, store, val_set);
    report.val_curve.emplace_back(epoch, val);
    if (val < report.best_val_mae) {
      report.best_val_mae = val;
      report.best_epoch = epoch;
      best = store;
      stale = 0;
    } else if (++stale >= ac.patience) {
      break;
    }
    if (ac.time_budget_seconds > 0.0 && elapsed() > ac.time_budget_seconds) break;
  }
  report.test_mae = approx_mae(h, idx, cfg, best, test_set);
  report.identity_mae = identity_mae(test_set);
  report.seconds = elapsed();
  return report;
}

ApproxReport approx_experiment(const Hypergraph& h, RegKind kind, const nn::ModelConfig& cfg, const ApproxConfig& ac) {
  const PairIndex idx = build_pair_index(h);
  const auto samples = generate_semisynthetic(h, idx, kind, ac.samples, ac.seed);
  ApproxReport report = approx_train(h, idx, samples, cfg, ac);
  report.kind = kind;
  return report;
}

}  // namespace conhd::enc
