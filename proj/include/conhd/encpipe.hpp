#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "conhd/diffusion.hpp"
#include "conhd/hypergraph.hpp"
#include "conhd/model.hpp"

namespace conhd::enc {

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split parse_split(std::string_view text);

/// Edge-dependent node classification data. Labels are indexed by the pair
/// ids of `idx`; splits are per edge.
struct EncDataset {
  Hypergraph graph;
  PairIndex idx;
  Matrix features;  ///< n x f
  std::vector<int> labels;
  int classes = 0;
  std::vector<Split> edge_split;

  /// Throws StructuralError/ParseError on a violated invariant.
  void validate() const;
  std::vector<EdgeId> edges_in(Split split) const;
};

/// Directory layout: edges.txt, features.csv (node_id,x_1..x_f),
/// labels.csv (node_id,edge_id,label), splits.csv (edge_id,split).
/// Edge ids are 0-based line positions of edges in edges.txt.
EncDataset load_enc_dataset(const std::filesystem::path& dir);
void write_enc_dataset(const EncDataset& ds, const std::filesystem::path& dir);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
};

/// Shuffles edges and cuts them into train/val/test by the fractions.
std::vector<Split> split_edges(std::size_t num_edges, SplitFractions fractions, std::uint64_t seed);

/// Drops edges of degree <= 3; every remaining edge yields `variants` new
/// edges in which floor(d_e/2) members are swapped for uniformly drawn
/// non-members. Label 1 marks a swapped-in node, 0 an original member.
EncDataset make_outsider_dataset(const Hypergraph& h, const Matrix& features, std::size_t variants,
                                 std::uint64_t seed, SplitFractions fractions = {});

struct RankLabelOptions {
  /// Extra pure-noise feature columns appended after the score.
  int noise_features = 0;
};

/// Latent score per node, uniform on [0, 1) and exposed as feature column 0.
/// Label of (v, e) is the tercile floor(3 r / d_e) of v's rank r among the
/// members of e, ranks ascending by (score, node id).
EncDataset make_rank_label_dataset(const Hypergraph& h, std::uint64_t seed, RankLabelOptions options = {},
                                   SplitFractions fractions = {});

/// Labels for given scores; exposed for direct testing of the rank rule.
std::vector<int> rank_labels(const Hypergraph& h, const PairIndex& idx, const std::vector<double>& scores);

/// Sub-hypergraph for one mini-batch.
struct Batch {
  Hypergraph graph;
  PairIndex idx;
  Matrix features;
  std::vector<NodeId> global_node;  ///< local node -> dataset node
  std::vector<EdgeId> global_edge;  ///< local edge -> dataset edge
  std::vector<PairId> targets;      ///< local pair ids to predict
  std::vector<PairId> target_global;
  std::vector<int> labels;  ///< one per target
};

/// Targets are all pairs of `edge_ids`. Each member node of a target edge
/// keeps its target edges plus a uniform sample (without replacement) of its
/// other incident edges, so that it keeps max(neighbor_sample, #target edges)
/// incident edges, or all of them if it has fewer. Edges are never cut.
Batch sample_batch(const EncDataset& ds, const std::vector<EdgeId>& edge_ids, std::size_t neighbor_sample, Rng& rng);

struct Metrics {
  double loss = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::size_t count = 0;
};

/// Micro-F1 (equal to accuracy here) and Macro-F1 with F1 = 0 for a class
/// that is neither predicted nor present.
Metrics classification_metrics(const std::vector<int>& predictions, const std::vector<int>& labels, int classes);

struct TrainConfig {
  int epochs = 100;
  int patience = 10;
  double min_delta = 1e-4;
  double lr = 1e-3;
  std::size_t batch_edges = 64;
  std::uint64_t seed = 0;
};

struct LogRow {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
};

struct TrainResult {
  nn::ModelConfig cfg;
  nn::ParameterStore best;
  std::vector<LogRow> log;
  int best_epoch = 0;
  double best_val_micro_f1 = 0.0;
  int epochs_run = 0;
};

/// Epoch 0 records the untrained model. Each later epoch shuffles the
/// training edges, steps once per batch, then evaluates train and val in
/// eval mode; training stops after `patience` epochs without a validation
/// Micro-F1 gain above min_delta. The best validation parameters are kept.
TrainResult train(const EncDataset& ds, const nn::ModelConfig& cfg, const TrainConfig& tc);

/// Eval-mode metrics over the edges of one split.
Metrics evaluate(const EncDataset& ds, const nn::ModelConfig& cfg, nn::ParameterStore& store, Split split,
                 std::size_t batch_edges = 64, std::uint64_t seed = 0);

/// Predicted class per pair of the whole dataset (pair order), eval mode.
std::vector<int> predict_all(const EncDataset& ds, const nn::ModelConfig& cfg, nn::ParameterStore& store);

void write_train_log(const std::vector<LogRow>& log, const std::filesystem::path& path);
/// {"micro_f1":..,"macro_f1":..,"mae":..,"per_class_f1":[..]}; absent
/// quantities are null.
std::string metrics_json(const std::optional<Metrics>& classification, std::optional<double> mae);

struct PairFilter {
  std::optional<NodeId> node;
  std::optional<EdgeId> edge;
};

/// Full-graph eval-mode co-representations for pairs matching the filter,
/// as node_id,edge_id,label,h_1..h_d. Returns the number of rows written;
/// prints a warning when nothing matches.
std::size_t export_embeddings(const EncDataset& ds, const nn::ModelConfig& cfg, nn::ParameterStore& store,
                              const PairFilter& filter, const std::filesystem::path& path);

struct ApproxConfig {
  std::size_t samples = 100;
  std::size_t val_samples = 20;
  std::size_t test_samples = 20;
  int epochs = 100;
  int patience = 20;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Start from the identity map (see nn::init_identity).
  bool init_identity = false;
  /// Stop training once this many seconds have elapsed (0 = no limit).
  double time_budget_seconds = 0.0;
};

struct ApproxReport {
  RegKind kind = RegKind::CE;
  double test_mae = 0.0;
  double identity_mae = 0.0;
  double best_val_mae = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  double seconds = 0.0;
  std::vector<std::pair<int, double>> val_curve;
};

/// Mean |prediction - H2| over all pairs of the given samples.
double approx_mae(const Hypergraph& h, const PairIndex& idx, const nn::ModelConfig& cfg, nn::ParameterStore& store,
                  const std::vector<SemisyntheticSample>& samples);
double identity_mae(const std::vector<SemisyntheticSample>& samples);

/// Generates samples, trains on the first (samples - val - test), early-stops
/// on validation MAE, and reports test MAE next to the identity baseline.
ApproxReport approx_experiment(const Hypergraph& h, RegKind kind, const nn::ModelConfig& cfg, const ApproxConfig& ac);
/// Same protocol on already generated samples.
ApproxReport approx_train(const Hypergraph& h, const PairIndex& idx, const std::vector<SemisyntheticSample>& samples,
                          const nn::ModelConfig& cfg, const ApproxConfig& ac);

}  // namespace conhd::enc
