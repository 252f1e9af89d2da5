#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "conhd/rng.hpp"

namespace conhd {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;
using PairId = std::uint32_t;

/// Immutable hypergraph with both incidence views.
///
/// Node ids are dense in [0, n), edge ids dense in [0, m). Member order of an
/// edge is kept as given; incident(v) lists edges in increasing id order.
class Hypergraph {
 public:
  Hypergraph() = default;

  /// Validates and builds the dual view. Throws StructuralError on an empty
  /// edge, a duplicate member, or a member id >= num_nodes.
  Hypergraph(std::size_t num_nodes, std::vector<std::vector<NodeId>> members);

  std::size_t num_nodes() const noexcept { return incident_.size(); }
  std::size_t num_edges() const noexcept { return members_.size(); }
  /// Total incidence count, i.e. sum of edge degrees.
  std::size_t num_pairs() const noexcept { return num_pairs_; }

  std::span<const NodeId> members(EdgeId e) const { return members_[e]; }
  std::span<const EdgeId> incident(NodeId v) const { return incident_[v]; }
  std::size_t edge_degree(EdgeId e) const { return members_[e].size(); }
  std::size_t node_degree(NodeId v) const { return incident_[v].size(); }

  const std::vector<std::vector<NodeId>>& all_members() const noexcept { return members_; }

  friend bool operator==(const Hypergraph&, const Hypergraph&) = default;

 private:
  std::vector<std::vector<NodeId>> members_;
  std::vector<std::vector<EdgeId>> incident_;
  std::size_t num_pairs_ = 0;
};

/// Dense indexing of the (node, edge) incidences. Pair ids run edge by edge,
/// members in stored order, so edge_slice(e) is a contiguous range.
class PairIndex {
 public:
  PairIndex() = default;
  explicit PairIndex(const Hypergraph& h);

  std::size_t size() const noexcept { return pair_node_.size(); }

  NodeId node_of(PairId p) const { return pair_node_[p]; }
  EdgeId edge_of(PairId p) const { return pair_edge_[p]; }
  std::span<const NodeId> pair_nodes() const noexcept { return pair_node_; }
  std::span<const EdgeId> pair_edges() const noexcept { return pair_edge_; }

  std::span<const PairId> edge_slice(EdgeId e) const {
    return {edge_pairs_.data() + edge_offset_[e], edge_offset_[e + 1] - edge_offset_[e]};
  }
  std::span<const PairId> node_slice(NodeId v) const {
    return {node_pairs_.data() + node_offset_[v], node_offset_[v + 1] - node_offset_[v]};
  }

  std::size_t num_edges() const noexcept { return edge_offset_.size() - 1; }
  std::size_t num_nodes() const noexcept { return node_offset_.size() - 1; }

  /// Dense id of (v, e), or nullopt when v is not a member of e.
  std::optional<PairId> find(NodeId v, EdgeId e) const;

 private:
  std::vector<NodeId> pair_node_;
  std::vector<EdgeId> pair_edge_;
  std::vector<std::size_t> edge_offset_{0};
  std::vector<PairId> edge_pairs_;
  std::vector<std::size_t> node_offset_{0};
  std::vector<PairId> node_pairs_;
};

PairIndex build_pair_index(const Hypergraph& h);

struct LoadedHypergraph {
  Hypergraph graph;
  /// original_ids[dense] = id as it appeared in the file.
  std::vector<std::int64_t> original_ids;
};

/// Reads the text format: one edge per line, whitespace-separated
/// non-negative node ids, '#' comment lines. A header comment written by
/// write_hypergraph ("# conhd-hypergraph nodes=N") pins the node count and
/// keeps ids as they are; otherwise ids are densified in ascending order.
LoadedHypergraph load_hypergraph(const std::filesystem::path& path);

void write_hypergraph(const Hypergraph& h, const std::filesystem::path& path);

/// Two-column CSV "original_id,dense_id".
void write_id_map(std::span<const std::int64_t> original_ids, const std::filesystem::path& path);

struct EdgeSizeLaw {
  std::size_t min_size = 2;
  std::size_t max_size = 2;
};

/// Edges of independently drawn size (uniform on [min_size, max_size]),
/// each a uniform sample of distinct nodes. Reproducible for a fixed seed.
Hypergraph random_hypergraph(std::size_t n, std::size_t m, EdgeSizeLaw law, std::uint64_t seed);

/// Full-scan check of every structural invariant. Returns false on the first
/// violation.
bool check_invariants(const Hypergraph& h);
bool check_invariants(const Hypergraph& h, const PairIndex& idx);

}  // namespace conhd
