#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "conhd/autodiff.hpp"
#include "conhd/hypergraph.hpp"

namespace conhd::nn {

enum class Operator { UNB, ISAB };
enum class LayerForm { GD, ADMM };

std::string to_string(Operator op);
std::string to_string(LayerForm form);
Operator parse_operator(std::string_view text);
LayerForm parse_layer_form(std::string_view text);

struct ModelConfig {
  Operator op = Operator::UNB;
  int d = 128;
  int layers = 2;
  bool share_weights = true;
  LayerForm method = LayerForm::GD;
  bool phi_equivariant = true;
  bool varphi_equivariant = true;
  int inducing = 4;
  int heads = 4;
  /// Linear layers per operator MLP.
  int mlp_depth = 2;
  double dropout = 0.7;
  int neighbor_sample = 40;
  int in_features = 1;
  /// Output width of the head: class count, or 1 for regression.
  int classes = 2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Row layouts shared by every layer of one forward pass. Pairs are kept in
/// PairIndex order, which groups them by edge; node groups are reached via a
/// permutation into node-major order.
struct Structure {
  Index pairs = 0;
  Index nodes = 0;
  std::shared_ptr<const Segments> edge_segs;
  std::shared_ptr<const Segments> node_segs;
  std::shared_ptr<const std::vector<Index>> to_node_order;
  std::shared_ptr<const std::vector<Index>> from_node_order;
  /// Node id of every pair, for broadcasting node features.
  std::shared_ptr<const std::vector<Index>> pair_node;
};

Structure build_structure(const PairIndex& idx);

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;
};

struct DiffusionInfoState {
  Var m;
  Var m_node;
  Var h;
  Var h0;
};

/// Glorot-uniform weights, zero biases, unit layer-norm gains.
ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Parameter-name prefix of layer l ("layer." when weights are shared).
std::string layer_prefix(const ModelConfig& cfg, int layer);

Var mlp_forward(Tape& tape, ParameterStore& store, const std::string& prefix, int depth, Var x, bool final_activation,
                double dropout_rate, const ForwardContext& ctx);

/// Equivariant operators applied to every group of segs at once.
Var unb_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::string& prefix, Var s,
                const std::shared_ptr<const Segments>& segs, const ForwardContext& ctx);
Var isab_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::string& prefix, Var s,
                 const std::shared_ptr<const Segments>& segs, const ForwardContext& ctx);

/// phi over edge groups (side = "phi") or varphi over node groups
/// (side = "varphi"), with the mean ablation applied when that side is not
/// equivariant. Input and output are in pair order.
Var diffusion_operator(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                       const std::string& prefix, bool node_side, Var h, const ForwardContext& ctx);

DiffusionInfoState conhd_gd_layer(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                                  const DiffusionInfoState& state, int layer, const ForwardContext& ctx);
DiffusionInfoState conhd_admm_layer(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                                    const DiffusionInfoState& state, int layer, const ForwardContext& ctx);

/// Input projection of node features, broadcast to pairs.
Var initial_corep(Tape& tape, ParameterStore& store, const Structure& st, const Matrix& node_features);

/// Final co-representations H^(L), P x d.
Var conhd_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                  const Matrix& node_features, const ForwardContext& ctx);

/// Row-wise MLP d -> d -> classes.
Var classify_head(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var h);

/// Rewrites parameters so the model returns the first input feature of each
/// pair's node unchanged: projection into [x, -x], psi passing the h0 slot through,
/// head computing relu(x) - relu(-x). Requires classes == 1.
void init_identity(const ModelConfig& cfg, ParameterStore& store);

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterStore& store,
                      const std::string& extra_json = "{}");

struct Checkpoint {
  ModelConfig cfg;
  ParameterStore store;
  std::string extra_json;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const ModelConfig& cfg);
/// Unknown keys are rejected with ConfigError.
ModelConfig config_from_json(const std::string& text);

}  // namespace conhd::nn
