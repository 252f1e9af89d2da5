#include "conhd/hypergraph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>

#include "conhd/errors.hpp"

namespace conhd {

Hypergraph::Hypergraph(std::size_t num_nodes, std::vector<std::vector<NodeId>> members)
    : members_(std::move(members)), incident_(num_nodes) {
  std::vector<EdgeId> last_seen(num_nodes, static_cast<EdgeId>(-1));
  for (EdgeId e = 0; e < members_.size(); ++e) {
    const auto& edge = members_[e];
    if (edge.empty()) {
      throw StructuralError("edge " + std::to_string(e) + " is empty");
    }
    for (NodeId v : edge) {
      if (v >= num_nodes) {
        throw StructuralError("edge " + std::to_string(e) + " references node " +
                              std::to_string(v) + " outside [0, " + std::to_string(num_nodes) +
                              ")");
      }
      if (last_seen[v] == e) {
        throw StructuralError("duplicate node " + std::to_string(v) + " in edge " +
                              std::to_string(e));
      }
      last_seen[v] = e;
      incident_[v].push_back(e);
    }
    num_pairs_ += edge.size();
  }
}

PairIndex::PairIndex(const Hypergraph& h) {
  const std::size_t total = h.num_pairs();
  pair_node_.reserve(total);
  pair_edge_.reserve(total);
  edge_pairs_.reserve(total);
  edge_offset_.reserve(h.num_edges() + 1);

  std::vector<std::size_t> node_count(h.num_nodes(), 0);
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    for (NodeId v : h.members(e)) {
      const auto p = static_cast<PairId>(pair_node_.size());
      pair_node_.push_back(v);
      pair_edge_.push_back(e);
      edge_pairs_.push_back(p);
      ++node_count[v];
    }
    edge_offset_.push_back(pair_node_.size());
  }

  node_offset_.resize(h.num_nodes() + 1, 0);
  for (NodeId v = 0; v < h.num_nodes(); ++v) node_offset_[v + 1] = node_offset_[v] + node_count[v];
  node_pairs_.resize(total);
  std::vector<std::size_t> cursor(node_offset_.begin(), node_offset_.end() - 1);
  // Pairs are visited in edge order, so each node slice follows incident(v).
  for (PairId p = 0; p < total; ++p) node_pairs_[cursor[pair_node_[p]]++] = p;
}

std::optional<PairId> PairIndex::find(NodeId v, EdgeId e) const {
  if (e >= num_edges()) return std::nullopt;
  for (PairId p : edge_slice(e)) {
    if (pair_node_[p] == v) return p;
  }
  return std::nullopt;
}

PairIndex build_pair_index(const Hypergraph& h) { return PairIndex(h); }

namespace {

constexpr std::string_view kHeader = "# conhd-hypergraph nodes=";

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

LoadedHypergraph load_hypergraph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open hypergraph file " + path.string());

  std::optional<std::size_t> declared_nodes;
  std::vector<std::vector<std::int64_t>> raw_edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') {
      if (line.rfind(kHeader, 0) == 0) {
        declared_nodes = std::stoull(line.substr(kHeader.size()));
      }
      continue;
    }
    if (is_blank(line)) {
      throw StructuralError("line " + std::to_string(line_no) + ": empty edge");
    }
    std::vector<std::int64_t> edge;
    std::istringstream tokens(line);
    std::string token;
    while (tokens >> token) {
      std::int64_t id = 0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), id);
      if (ec != std::errc() || ptr != token.data() + token.size() || id < 0) {
        throw ParseError("line " + std::to_string(line_no) + ": invalid node id '" + token + "'");
      }
      if (std::find(edge.begin(), edge.end(), id) != edge.end()) {
        throw StructuralError("line " + std::to_string(line_no) + ": duplicate node " + token +
                              " in edge");
      }
      edge.push_back(id);
    }
    raw_edges.push_back(std::move(edge));
  }

  LoadedHypergraph out;
  std::vector<std::vector<NodeId>> members(raw_edges.size());
  if (declared_nodes) {
    out.original_ids.resize(*declared_nodes);
    for (std::size_t i = 0; i < *declared_nodes; ++i) out.original_ids[i] = static_cast<std::int64_t>(i);
    for (std::size_t e = 0; e < raw_edges.size(); ++e) {
      for (auto id : raw_edges[e]) {
        if (static_cast<std::size_t>(id) >= *declared_nodes) {
          throw StructuralError("node id " + std::to_string(id) + " exceeds declared node count");
        }
        members[e].push_back(static_cast<NodeId>(id));
      }
    }
    out.graph = Hypergraph(*declared_nodes, std::move(members));
    return out;
  }

  for (const auto& edge : raw_edges) out.original_ids.insert(out.original_ids.end(), edge.begin(), edge.end());
  std::sort(out.original_ids.begin(), out.original_ids.end());
  out.original_ids.erase(std::unique(out.original_ids.begin(), out.original_ids.end()),
                         out.original_ids.end());
  std::unordered_map<std::int64_t, NodeId> dense;
  dense.reserve(out.original_ids.size());
  for (std::size_t i = 0; i < out.original_ids.size(); ++i) dense[out.original_ids[i]] = static_cast<NodeId>(i);
  for (std::size_t e = 0; e < raw_edges.size(); ++e) {
    for (auto id : raw_edges[e]) members[e].push_back(dense.at(id));
  }
  out.graph = Hypergraph(out.original_ids.size(), std::move(members));
  return out;
}

void write_hypergraph(const Hypergraph& h, const std::filesystem::path& path) {
  if (h.num_edges() == 0) throw StructuralError("cannot write a hypergraph with no edges");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kHeader << h.num_nodes() << '\n';
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    const auto members = h.members(e);
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i) out << ' ';
      out << members[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_id_map(std::span<const std::int64_t> original_ids, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "original_id,dense_id\n";
  for (std::size_t i = 0; i < original_ids.size(); ++i) out << original_ids[i] << ',' << i << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Hypergraph random_hypergraph(std::size_t n, std::size_t m, EdgeSizeLaw law, std::uint64_t seed) {
  if (n < 2) throw ParameterError("random_hypergraph needs n >= 2");
  if (m < 1) throw ParameterError("random_hypergraph needs m >= 1");
  if (law.min_size < 2 || law.min_size > law.max_size) {
    throw ParameterError("edge size law must satisfy 2 <= min_size <= max_size");
  }
  if (law.max_size > n) {
    throw ParameterError("edge size " + std::to_string(law.max_size) + " exceeds node count " +
                         std::to_string(n));
  }
  Rng rng = make_rng(seed, "hypercore.random_hypergraph");
  std::vector<NodeId> pool(n);
  std::vector<std::vector<NodeId>> members(m);
  for (auto& edge : members) {
    const auto size = static_cast<std::size_t>(uniform_index(rng, law.min_size, law.max_size));
    for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<NodeId>(i);
    // Partial Fisher-Yates: the first `size` slots become the sample.
    for (std::size_t i = 0; i < size; ++i) {
      std::swap(pool[i], pool[uniform_index(rng, i, n - 1)]);
    }
    edge.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(size));
  }
  return Hypergraph(n, std::move(members));
}

bool check_invariants(const Hypergraph& h) {
  std::size_t node_sum = 0;
  std::size_t edge_sum = 0;
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    const auto members = h.members(e);
    if (members.empty()) return false;
    edge_sum += members.size();
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i] >= h.num_nodes()) return false;
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        if (members[i] == members[j]) return false;
      }
      const auto inc = h.incident(members[i]);
      if (std::find(inc.begin(), inc.end(), e) == inc.end()) return false;
    }
  }
  for (NodeId v = 0; v < h.num_nodes(); ++v) {
    node_sum += h.node_degree(v);
    for (EdgeId e : h.incident(v)) {
      if (e >= h.num_edges()) return false;
      const auto members = h.members(e);
      if (std::find(members.begin(), members.end(), v) == members.end()) return false;
    }
  }
  return node_sum == edge_sum && edge_sum == h.num_pairs();
}

bool check_invariants(const Hypergraph& h, const PairIndex& idx) {
  if (!check_invariants(h) || idx.size() != h.num_pairs()) return false;
  std::vector<int> seen_edge(idx.size(), 0);
  std::vector<int> seen_node(idx.size(), 0);
  for (EdgeId e = 0; e < h.num_edges(); ++e) {
    const auto slice = idx.edge_slice(e);
    const auto members = h.members(e);
    if (slice.size() != members.size()) return false;
    for (std::size_t i = 0; i < slice.size(); ++i) {
      if (idx.node_of(slice[i]) != members[i] || idx.edge_of(slice[i]) != e) return false;
      ++seen_edge[slice[i]];
    }
  }
  for (NodeId v = 0; v < h.num_nodes(); ++v) {
    const auto slice = idx.node_slice(v);
    const auto incident = h.incident(v);
    if (slice.size() != incident.size()) return false;
    for (std::size_t i = 0; i < slice.size(); ++i) {
      if (idx.node_of(slice[i]) != v || idx.edge_of(slice[i]) != incident[i]) return false;
      ++seen_node[slice[i]];
    }
  }
  return std::all_of(seen_edge.begin(), seen_edge.end(), [](int c) { return c == 1; }) &&
         std::all_of(seen_node.begin(), seen_node.end(), [](int c) { return c == 1; });
}

}  // namespace conhd
