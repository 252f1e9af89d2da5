#include <unistd.h>

#include <algorithm>
#include <filesystem>

#include "conhd/errors.hpp"
#include "conhd/hypergraph.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace conhd;
using conhd::testing::TempDir;
using conhd::testing::write_text;

TEST_SUITE_BEGIN("hypercore");

TEST_CASE("load_hypergraph reads a small file") {
  TempDir dir("load");
  write_text(dir / "g.txt", "0 1 2\n1 3\n");
  const auto loaded = load_hypergraph(dir / "g.txt");
  CHECK(loaded.graph.num_nodes() == 4);
  CHECK(loaded.graph.num_edges() == 2);
  CHECK(loaded.graph.node_degree(1) == 2);
  CHECK(check_invariants(loaded.graph));
}

TEST_CASE("load_hypergraph densifies sparse ids and skips comments") {
  TempDir dir("sparse");
  write_text(dir / "g.txt", "# a comment\n10 40 7\n  # indented comment\n40 1000\n");
  const auto loaded = load_hypergraph(dir / "g.txt");
  REQUIRE(loaded.graph.num_nodes() == 4);
  CHECK(loaded.original_ids == std::vector<std::int64_t>{7, 10, 40, 1000});
  // "10 40 7" -> dense 1 2 0
  const auto first = loaded.graph.members(0);
  CHECK(std::vector<NodeId>(first.begin(), first.end()) == std::vector<NodeId>{1, 2, 0});

  write_id_map(loaded.original_ids, dir / "map.csv");
  CHECK(conhd::testing::read_text(dir / "map.csv") == "original_id,dense_id\n7,0\n10,1\n40,2\n1000,3\n");
}

TEST_CASE("load_hypergraph rejects malformed input") {
  TempDir dir("bad");
  write_text(dir / "empty_line.txt", "0 1\n\n2 3\n");
  CHECK_THROWS_AS(load_hypergraph(dir / "empty_line.txt"), StructuralError);

  write_text(dir / "dup.txt", "0 0 1\n");
  CHECK_THROWS_AS(load_hypergraph(dir / "dup.txt"), StructuralError);

  write_text(dir / "token.txt", "0 x 1\n");
  CHECK_THROWS_AS(load_hypergraph(dir / "token.txt"), ParseError);

  write_text(dir / "neg.txt", "0 -1\n");
  CHECK_THROWS_AS(load_hypergraph(dir / "neg.txt"), ParseError);

  CHECK_THROWS_AS(load_hypergraph(dir / "missing.txt"), IoError);
}

TEST_CASE("hypergraph constructor validates") {
  CHECK_THROWS_AS(Hypergraph(3, {{0, 1}, {}}), StructuralError);
  CHECK_THROWS_AS(Hypergraph(3, {{0, 3}}), StructuralError);
  CHECK_THROWS_AS(Hypergraph(3, {{2, 1, 2}}), StructuralError);
}

TEST_CASE("build_pair_index examples") {
  SUBCASE("two overlapping edges") {
    const Hypergraph h(3, {{0, 1}, {1, 2}});
    const auto idx = build_pair_index(h);
    CHECK(idx.size() == 4);
    CHECK(idx.node_slice(1).size() == 2);
    CHECK(idx.find(1, 1).value() == 2);
    CHECK_FALSE(idx.find(0, 1).has_value());
  }
  SUBCASE("single large edge") {
    const Hypergraph h(5, {{4, 3, 2, 1, 0}});
    const auto idx = build_pair_index(h);
    CHECK(idx.size() == 5);
    CHECK(idx.num_edges() == 1);
    CHECK(idx.edge_slice(0).size() == 5);
  }
  SUBCASE("star") {
    const Hypergraph h(4, {{0, 1}, {0, 2}, {0, 3}});
    const auto idx = build_pair_index(h);
    CHECK(idx.node_slice(0).size() == 3);
    CHECK(check_invariants(h, idx));
  }
}

TEST_CASE("random_hypergraph is reproducible and respects the size law") {
  const auto a = random_hypergraph(10, 5, {2, 4}, 7);
  const auto b = random_hypergraph(10, 5, {2, 4}, 7);
  CHECK(a == b);
  CHECK_FALSE(a == random_hypergraph(10, 5, {2, 4}, 8));

  CHECK_THROWS_AS(random_hypergraph(10, 5, {11, 11}, 7), ParameterError);
  CHECK_THROWS_AS(random_hypergraph(1, 5, {2, 2}, 7), ParameterError);
  CHECK_THROWS_AS(random_hypergraph(10, 0, {2, 2}, 7), ParameterError);

  const auto big = random_hypergraph(100, 150, {2, 6}, 1);
  CHECK(big.num_edges() == 150);
  std::size_t min_size = 100, max_size = 0;
  for (EdgeId e = 0; e < big.num_edges(); ++e) {
    min_size = std::min(min_size, big.edge_degree(e));
    max_size = std::max(max_size, big.edge_degree(e));
  }
  CHECK(min_size >= 2);
  CHECK(max_size <= 6);
  // with 150 draws every size in 2..6 shows up
  CHECK(min_size == 2);
  CHECK(max_size == 6);
}

TEST_CASE("invariants hold on generated hypergraphs") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto h = random_hypergraph(5 + seed, 3 + 2 * seed, {2, 5}, seed);
    const auto idx = build_pair_index(h);
    REQUIRE(check_invariants(h, idx));
    std::size_t node_sum = 0;
    for (NodeId v = 0; v < h.num_nodes(); ++v) node_sum += h.node_degree(v);
    CHECK(node_sum == idx.size());
    // multiset of node ids recovered from each edge slice equals members(e)
    for (EdgeId e = 0; e < h.num_edges(); ++e) {
      std::vector<NodeId> from_slice;
      for (PairId p : idx.edge_slice(e)) from_slice.push_back(idx.node_of(p));
      std::vector<NodeId> members(h.members(e).begin(), h.members(e).end());
      std::sort(from_slice.begin(), from_slice.end());
      std::sort(members.begin(), members.end());
      CHECK(from_slice == members);
    }
  }
}

TEST_CASE("write_hypergraph round-trips") {
  TempDir dir("roundtrip");
  const auto h = random_hypergraph(30, 12, {2, 5}, 3);
  write_hypergraph(h, dir / "g.txt");
  const auto loaded = load_hypergraph(dir / "g.txt");
  CHECK(loaded.graph == h);

  CHECK_THROWS_AS(write_hypergraph(Hypergraph(3, {}), dir / "empty.txt"), StructuralError);
  CHECK_THROWS_AS(write_hypergraph(h, dir / "no_such_dir" / "g.txt"), IoError);
}

TEST_SUITE_END();
