#include "conhd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "conhd/errors.hpp"
#include "json.hpp"

namespace conhd::nn {

using json = nlohmann::json;

std::string to_string(Operator op) { return op == Operator::UNB ? "UNB" : "ISAB"; }
std::string to_string(LayerForm form) { return form == LayerForm::GD ? "GD" : "ADMM"; }

Operator parse_operator(std::string_view text) {
  if (text == "UNB" || text == "unb") return Operator::UNB;
  if (text == "ISAB" || text == "isab") return Operator::ISAB;
  throw ConfigError("unknown operator '" + std::string(text) + "' (expected UNB or ISAB)");
}

LayerForm parse_layer_form(std::string_view text) {
  if (text == "GD" || text == "gd") return LayerForm::GD;
  if (text == "ADMM" || text == "admm") return LayerForm::ADMM;
  throw ConfigError("unknown layer form '" + std::string(text) + "' (expected GD or ADMM)");
}

void ModelConfig::validate() const {
  if (d < 1) throw ParameterError("d must be >= 1");
  if (layers < 1) throw ParameterError("layers must be >= 1");
  if (inducing < 1) throw ParameterError("inducing points must be >= 1");
  if (heads < 1 || d % heads != 0) throw ParameterError("heads must divide d");
  if (mlp_depth < 1) throw ParameterError("mlp_depth must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must be in [0, 1)");
  if (neighbor_sample < 1) throw ParameterError("neighbor_sample must be >= 1");
  if (in_features < 1) throw ParameterError("in_features must be >= 1");
  if (classes < 1) throw ParameterError("classes must be >= 1");
}

Structure build_structure(const PairIndex& idx) {
  Structure st;
  st.pairs = static_cast<Index>(idx.size());
  st.nodes = static_cast<Index>(idx.num_nodes());
  std::vector<Index> edge_offsets{0};
  for (EdgeId e = 0; e < idx.num_edges(); ++e) {
    const auto slice = idx.edge_slice(e);
    if (!slice.empty() && static_cast<Index>(slice.front()) != edge_offsets.back()) {
      throw StateError("pair index is not edge-major");
    }
    edge_offsets.push_back(edge_offsets.back() + static_cast<Index>(slice.size()));
  }
  st.edge_segs = std::make_shared<const Segments>(Segments::from_offsets(std::move(edge_offsets)));

  std::vector<Index> node_offsets{0};
  std::vector<Index> to_node(idx.size());
  std::vector<Index> from_node(idx.size());
  Index pos = 0;
  for (NodeId v = 0; v < idx.num_nodes(); ++v) {
    const auto slice = idx.node_slice(v);
    if (slice.empty()) continue;
    for (PairId p : slice) {
      to_node[static_cast<std::size_t>(pos)] = p;
      from_node[p] = pos;
      ++pos;
    }
    node_offsets.push_back(pos);
  }
  st.node_segs = std::make_shared<const Segments>(Segments::from_offsets(std::move(node_offsets)));
  st.to_node_order = std::make_shared<const std::vector<Index>>(std::move(to_node));
  st.from_node_order = std::make_shared<const std::vector<Index>>(std::move(from_node));
  std::vector<Index> pair_node(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) pair_node[p] = idx.node_of(static_cast<PairId>(p));
  st.pair_node = std::make_shared<const std::vector<Index>>(std::move(pair_node));
  return st;
}

std::string layer_prefix(const ModelConfig& cfg, int layer) {
  return cfg.share_weights ? std::string("layer.") : "layer" + std::to_string(layer) + ".";
}

namespace {

void add_linear(ParameterStore& store, Rng& rng, const std::string& name, Index in, Index out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (Index r = 0; r < in; ++r) {
    for (Index c = 0; c < out; ++c) w(r, c) = uniform_real(rng, -bound, bound);
  }
  store.add(name + ".W", std::move(w));
  store.add(name + ".b", Matrix::Zero(1, out));
}

void add_mlp(ParameterStore& store, Rng& rng, const std::string& prefix, int depth, Index in, Index width) {
  for (int i = 0; i < depth; ++i) add_linear(store, rng, prefix + std::to_string(i), i == 0 ? in : width, width);
}

void add_layer_norm(ParameterStore& store, const std::string& name, Index d) {
  store.add(name + ".g", Matrix::Ones(1, d));
  store.add(name + ".b", Matrix::Zero(1, d));
}

void add_operator(ParameterStore& store, Rng& rng, const ModelConfig& cfg, const std::string& prefix) {
  const Index d = cfg.d;
  if (cfg.op == Operator::UNB) {
    add_mlp(store, rng, prefix + "mlp1.", cfg.mlp_depth, d, d);
    add_mlp(store, rng, prefix + "mlp2.", cfg.mlp_depth, 2 * d, d);
    return;
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(cfg.inducing + d));
  Matrix inducing(cfg.inducing, d);
  for (Index r = 0; r < inducing.rows(); ++r) {
    for (Index c = 0; c < d; ++c) inducing(r, c) = uniform_real(rng, -bound, bound);
  }
  store.add(prefix + "inducing", std::move(inducing));
  for (const char* mab : {"mab0.", "mab1."}) {
    const std::string p = prefix + mab;
    for (const char* proj : {"q", "k", "v", "o"}) add_linear(store, rng, p + proj, d, d);
    add_layer_norm(store, p + "ln1", d);
    add_layer_norm(store, p + "ln2", d);
    add_mlp(store, rng, p + "ff.", cfg.mlp_depth, d, d);
  }
}

Var linear(Tape& tape, ParameterStore& store, const std::string& name, Var x) {
  return add_bias(matmul(x, tape.param(store, name + ".W")), tape.param(store, name + ".b"));
}

Var mab(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::string& prefix, Var q, Var k,
        const std::shared_ptr<const Segments>& q_segs, const std::shared_ptr<const Segments>& k_segs,
        const ForwardContext& ctx) {
  const Var qp = linear(tape, store, prefix + "q", q);
  const Var kp = linear(tape, store, prefix + "k", k);
  const Var vp = linear(tape, store, prefix + "v", k);
  const Var heads = segment_attention(qp, kp, vp, q_segs, k_segs, cfg.heads);
  const Var mixed = linear(tape, store, prefix + "o", heads);
  const Var m = layer_norm(add(q, mixed), tape.param(store, prefix + "ln1.g"), tape.param(store, prefix + "ln1.b"));
  const Var ff = mlp_forward(tape, store, prefix + "ff.", cfg.mlp_depth, m, false, cfg.dropout, ctx);
  return layer_norm(add(m, ff), tape.param(store, prefix + "ln2.g"), tape.param(store, prefix + "ln2.b"));
}

}  // namespace

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, "neuraldiff.init");
  ParameterStore store;
  const Index d = cfg.d;
  add_linear(store, rng, "input", cfg.in_features, d);
  const int distinct = cfg.share_weights ? 1 : cfg.layers;
  for (int l = 0; l < distinct; ++l) {
    const std::string prefix = layer_prefix(cfg, l);
    add_operator(store, rng, cfg, prefix + "phi.");
    add_operator(store, rng, cfg, prefix + "varphi.");
    add_linear(store, rng, prefix + "psi", (cfg.method == LayerForm::GD ? 4 : 3) * d, d);
  }
  add_linear(store, rng, "head.0", d, d);
  add_linear(store, rng, "head.1", d, cfg.classes);
  return store;
}

Var mlp_forward(Tape& tape, ParameterStore& store, const std::string& prefix, int depth, Var x, bool final_activation,
                double dropout_rate, const ForwardContext& ctx) {
  const std::string first = prefix + "0.W";
  if (store.get(first).value.rows() != x.cols()) {
    throw ShapeError("mlp " + prefix + ": input width " + std::to_string(x.cols()) + " does not match " +
                     std::to_string(store.get(first).value.rows()));
  }
  for (int i = 0; i < depth; ++i) {
    x = linear(tape, store, prefix + std::to_string(i), x);
    const bool hidden = i + 1 < depth;
    if (hidden || final_activation) x = relu(x);
    if (hidden && ctx.train && dropout_rate > 0.0) {
      if (ctx.rng == nullptr) throw StateError("training forward pass needs a random stream");
      x = dropout(x, dropout_rate, *ctx.rng);
    }
  }
  return x;
}

Var unb_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::string& prefix, Var s,
                const std::shared_ptr<const Segments>& segs, const ForwardContext& ctx) {
  if (s.cols() != cfg.d || s.rows() != segs->rows()) throw ShapeError("unb: stack shape does not match");
  const Var inner = mlp_forward(tape, store, prefix + "mlp1.", cfg.mlp_depth, s, false, cfg.dropout, ctx);
  const Var pooled = segment_sum(inner, segs);
  const Var spread = gather_rows(pooled, std::make_shared<const std::vector<Index>>(segs->row_group));
  return mlp_forward(tape, store, prefix + "mlp2.", cfg.mlp_depth, concat_cols({s, spread}), false, cfg.dropout, ctx);
}

Var isab_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::string& prefix, Var s,
                 const std::shared_ptr<const Segments>& segs, const ForwardContext& ctx) {
  if (s.cols() != cfg.d || s.rows() != segs->rows()) throw ShapeError("isab: stack shape does not match");
  const Index k = cfg.inducing;
  const Index groups = segs->count();
  auto repeat = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(groups * k));
  std::vector<Index> offsets(static_cast<std::size_t>(groups + 1));
  for (Index g = 0; g < groups; ++g) {
    for (Index j = 0; j < k; ++j) (*repeat)[static_cast<std::size_t>(g * k + j)] = j;
    offsets[static_cast<std::size_t>(g + 1)] = (g + 1) * k;
  }
  auto induced = std::make_shared<const Segments>(Segments::from_offsets(std::move(offsets)));
  const Var points = gather_rows(tape.param(store, prefix + "inducing"), repeat);
  const Var summary = mab(tape, store, cfg, prefix + "mab0.", points, s, induced, segs, ctx);
  return mab(tape, store, cfg, prefix + "mab1.", s, summary, segs, induced, ctx);
}

Var diffusion_operator(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                       const std::string& prefix, bool node_side, Var h, const ForwardContext& ctx) {
  const auto& segs = node_side ? st.node_segs : st.edge_segs;
  const bool equivariant = node_side ? cfg.varphi_equivariant : cfg.phi_equivariant;
  Var x = node_side ? gather_rows(h, st.to_node_order) : h;
  x = cfg.op == Operator::UNB ? unb_forward(tape, store, cfg, prefix, x, segs, ctx)
                              : isab_forward(tape, store, cfg, prefix, x, segs, ctx);
  if (!equivariant) x = segment_mean_broadcast(x, segs);
  return node_side ? gather_rows(x, st.from_node_order) : x;
}

namespace {

void check_state(const Structure& st, const ModelConfig& cfg, const DiffusionInfoState& s, bool need_history) {
  for (const Var* v : {&s.h, &s.h0}) {
    if (v->tape == nullptr) throw StateError("layer input is missing");
    if (v->rows() != st.pairs || v->cols() != cfg.d) throw ShapeError("layer input must be P x d");
  }
  if (!need_history) return;
  for (const Var* v : {&s.m, &s.m_node}) {
    if (v->tape == nullptr) throw StateError("ADMM layer needs the carried diffusion information");
    if (v->rows() != st.pairs || v->cols() != cfg.d) throw ShapeError("carried diffusion information must be P x d");
  }
}

}  // namespace

DiffusionInfoState conhd_gd_layer(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                                  const DiffusionInfoState& state, int layer, const ForwardContext& ctx) {
  check_state(st, cfg, state, false);
  const std::string prefix = layer_prefix(cfg, layer);
  DiffusionInfoState next;
  next.h0 = state.h0;
  next.m = diffusion_operator(tape, store, cfg, st, prefix + "phi.", false, state.h, ctx);
  next.m_node = diffusion_operator(tape, store, cfg, st, prefix + "varphi.", true, state.h, ctx);
  next.h = linear(tape, store, prefix + "psi", concat_cols({state.h, next.m, next.m_node, state.h0}));
  return next;
}

DiffusionInfoState conhd_admm_layer(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                                    const DiffusionInfoState& state, int layer, const ForwardContext& ctx) {
  check_state(st, cfg, state, true);
  const std::string prefix = layer_prefix(cfg, layer);
  auto relaxed = [&](const std::string& op, bool node_side, Var carried) {
    const Var reflected = sub(scale(state.h, 2.0), carried);
    const Var out = diffusion_operator(tape, store, cfg, st, prefix + op, node_side, reflected, ctx);
    return sub(add(out, carried), state.h);
  };
  DiffusionInfoState next;
  next.h0 = state.h0;
  next.m = relaxed("phi.", false, state.m);
  next.m_node = relaxed("varphi.", true, state.m_node);
  next.h = linear(tape, store, prefix + "psi", concat_cols({next.m, next.m_node, state.h0}));
  return next;
}

Var initial_corep(Tape& tape, ParameterStore& store, const Structure& st, const Matrix& node_features) {
  const Matrix& w = store.get("input.W").value;
  if (node_features.cols() != w.rows()) {
    throw ShapeError("node features have " + std::to_string(node_features.cols()) + " columns, model expects " +
                     std::to_string(w.rows()));
  }
  if (node_features.rows() != st.nodes) throw ShapeError("node feature rows do not match the node count");
  const Var projected = linear(tape, store, "input", tape.constant(node_features));
  return gather_rows(projected, st.pair_node);
}

Var conhd_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Structure& st,
                  const Matrix& node_features, const ForwardContext& ctx) {
  cfg.validate();
  const Var h0 = initial_corep(tape, store, st, node_features);
  DiffusionInfoState state{h0, h0, h0, h0};
  for (int l = 0; l < cfg.layers; ++l) {
    state = cfg.method == LayerForm::GD ? conhd_gd_layer(tape, store, cfg, st, state, l, ctx)
                                        : conhd_admm_layer(tape, store, cfg, st, state, l, ctx);
  }
  return state.h;
}

Var classify_head(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var h) {
  if (h.cols() != cfg.d) throw ShapeError("head input must have d columns");
  return mlp_forward(tape, store, "head.", 2, h, false, 0.0, ForwardContext{});
}

void init_identity(const ModelConfig& cfg, ParameterStore& store) {
  if (cfg.classes != 1 || cfg.d < 2) throw ParameterError("identity initialisation needs classes == 1 and d >= 2");
  const Index d = cfg.d;
  Matrix& w_in = store.get("input.W").value;
  w_in.setZero();
  w_in(0, 0) = 1.0;
  w_in(0, 1) = -1.0;
  store.get("input.b").value.setZero();
  const int distinct = cfg.share_weights ? 1 : cfg.layers;
  for (int l = 0; l < distinct; ++l) {
    const std::string prefix = layer_prefix(cfg, l);
    Matrix& psi = store.get(prefix + "psi.W").value;
    psi.setZero();
    // h0 is the last slot in both layer forms
    psi.bottomRows(d).setIdentity();
    store.get(prefix + "psi.b").value.setZero();
  }
  Matrix& w0 = store.get("head.0.W").value;
  w0.setZero();
  w0(0, 0) = 1.0;
  w0(1, 1) = 1.0;
  store.get("head.0.b").value.setZero();
  Matrix& w1 = store.get("head.1.W").value;
  w1.setZero();
  w1(0, 0) = 1.0;
  w1(1, 0) = -1.0;
  store.get("head.1.b").value.setZero();
}

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["operator"] = to_string(cfg.op);
  j["d"] = cfg.d;
  j["layers"] = cfg.layers;
  j["share_weights"] = cfg.share_weights;
  j["method"] = to_string(cfg.method);
  j["phi_equivariant"] = cfg.phi_equivariant;
  j["varphi_equivariant"] = cfg.varphi_equivariant;
  j["inducing"] = cfg.inducing;
  j["heads"] = cfg.heads;
  j["mlp_depth"] = cfg.mlp_depth;
  j["dropout"] = cfg.dropout;
  j["neighbor_sample"] = cfg.neighbor_sample;
  j["in_features"] = cfg.in_features;
  j["classes"] = cfg.classes;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "operator") cfg.op = parse_operator(value.get<std::string>());
      else if (key == "d") cfg.d = value.get<int>();
      else if (key == "layers") cfg.layers = value.get<int>();
      else if (key == "share_weights") cfg.share_weights = value.get<bool>();
      else if (key == "method") cfg.method = parse_layer_form(value.get<std::string>());
      else if (key == "phi_equivariant") cfg.phi_equivariant = value.get<bool>();
      else if (key == "varphi_equivariant") cfg.varphi_equivariant = value.get<bool>();
      else if (key == "inducing") cfg.inducing = value.get<int>();
      else if (key == "heads") cfg.heads = value.get<int>();
      else if (key == "mlp_depth") cfg.mlp_depth = value.get<int>();
      else if (key == "dropout") cfg.dropout = value.get<double>();
      else if (key == "neighbor_sample") cfg.neighbor_sample = value.get<int>();
      else if (key == "in_features") cfg.in_features = value.get<int>();
      else if (key == "classes") cfg.classes = value.get<int>();
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
  } catch (const json::type_error& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return cfg;
}

namespace {

constexpr char kMagic[8] = {'C', 'O', 'N', 'H', 'D', 'C', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t x) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((x >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw ParseError("checkpoint is truncated");
  std::uint64_t x = 0;
  for (int i = 7; i >= 0; --i) x = (x << 8) | bytes[i];
  return x;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint64_t limit) {
  const std::uint64_t n = get_u64(in);
  if (n > limit) throw ParseError("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError("checkpoint is truncated");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterStore& store,
                      const std::string& extra_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  json header;
  header["model"] = json::parse(config_to_json(cfg));
  header["extra"] = json::parse(extra_json);
  put_string(out, header.dump());
  put_u64(out, store.tensor_count());
  for (const auto& [name, p] : store) {
    put_string(out, name);
    put_u64(out, static_cast<std::uint64_t>(p.value.rows()));
    put_u64(out, static_cast<std::uint64_t>(p.value.cols()));
    for (Index r = 0; r < p.value.rows(); ++r) {
      for (Index c = 0; c < p.value.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(p.value(r, c)));
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("not a checkpoint file: " + path.string());
  Checkpoint ck;
  const json header = json::parse(get_string(in, 1u << 24));
  ck.cfg = config_from_json(header.at("model").dump());
  ck.extra_json = header.contains("extra") ? header["extra"].dump() : "{}";
  const std::uint64_t count = get_u64(in);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::string name = get_string(in, 4096);
    const auto rows = static_cast<Index>(get_u64(in));
    const auto cols = static_cast<Index>(get_u64(in));
    if (rows < 0 || cols < 0 || rows * cols > (Index{1} << 32)) throw ParseError("checkpoint tensor shape is implausible");
    Matrix value(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) value(r, c) = std::bit_cast<double>(get_u64(in));
    }
    ck.store.add(name, std::move(value));
  }
  // the parameter set must be exactly what the config implies
  const ParameterStore expected = init_parameters(ck.cfg, 0);
  if (expected.tensor_count() != ck.store.tensor_count()) throw ParseError("checkpoint parameters do not match its config");
  for (const auto& [name, p] : expected) {
    if (!ck.store.contains(name)) throw ParseError("checkpoint lacks parameter " + name);
    const Matrix& v = ck.store.get(name).value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) throw ParseError("checkpoint shape mismatch for " + name);
  }
  return ck;
}

}  // namespace conhd::nn
