#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "dense_reference.hpp"
#include "hgp/coarsen.hpp"
#include "hgp/error.hpp"
#include "hgp/rng.hpp"
#include "hgp/synth.hpp"

using namespace hgp;

namespace {

GeneGraph path_graph() {
  return GeneGraph::from_edges({"a", "b", "c", "d"}, std::vector<Edge>{{0, 1, 3.0}, {1, 2, 1.0}, {2, 3, 5.0}});
}

// Invariants of one assignment checked from scratch.
void check_assignment(const AssignmentMap& m) {
  REQUIRE(m.cluster_of.size() == m.n_fine);
  std::vector<std::size_t> sizes(m.n_coarse, 0);
  for (auto c : m.cluster_of) {
    REQUIRE(c < m.n_coarse);
    ++sizes[c];
  }
  for (auto s : sizes) CHECK((s == 1 || s == 2));
  CHECK(m.n_coarse >= (m.n_fine + 1) / 2);
  CHECK(m.n_coarse <= m.n_fine);
}

double intra_weight(const GeneGraph& g, const AssignmentMap& m) {
  double w = 0.0;
  for (const auto& e : g.edges()) {
    if (m.cluster_of[e.u] == m.cluster_of[e.v]) w += e.weight;
  }
  return w;
}

}  // namespace

TEST_CASE("path example with a fixed visit order") {
  const auto g = path_graph();
  const auto r = hem_level_with_order(g, {0, 1, 2, 3});
  CHECK(r.assignment.cluster_of == std::vector<std::size_t>{0, 0, 1, 1});
  CHECK(r.coarse.n_nodes() == 2);
  CHECK(r.coarse.n_edges() == 1);
  CHECK(r.coarse.weight(0, 1) == 1.0);
  CHECK(r.discarded_weight == 8.0);
  CHECK(r.coarse.node_ids() == std::vector<std::string>{"1:0", "1:1"});
}

TEST_CASE("matching prefers the heaviest unmatched neighbor") {
  const auto g = path_graph();
  // Visiting b first: b's heaviest neighbor is a (3 > 1); then c pairs with d.
  CHECK(hem_level_with_order(g, {1, 0, 2, 3}).assignment.cluster_of == std::vector<std::size_t>{0, 0, 1, 1});
  // Visiting c first: c takes d (5 > 1); b then takes a.
  CHECK(hem_level_with_order(g, {2, 1, 0, 3}).assignment.cluster_of == std::vector<std::size_t>{0, 0, 1, 1});
  // Star with equal weights: the center picks the lowest index.
  const auto star = GeneGraph::from_edges({"c", "x", "y", "z"},
                                          std::vector<Edge>{{0, 3, 1.0}, {0, 2, 1.0}, {0, 1, 1.0}});
  CHECK(hem_level_with_order(star, {0, 1, 2, 3}).assignment.cluster_of == std::vector<std::size_t>{0, 0, 1, 2});
}

TEST_CASE("edgeless graph stays as is") {
  const auto g = GeneGraph::from_edges({"a", "b", "c"}, std::vector<Edge>{});
  const auto r = hem_level(g, 7);
  CHECK(r.assignment.n_coarse == 3);
  CHECK(r.coarse.n_nodes() == 3);
  CHECK(r.coarse.n_edges() == 0);
  CHECK(r.assignment.cluster_of == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("triangle with equal weights") {
  const auto g = GeneGraph::from_edges({"a", "b", "c"}, std::vector<Edge>{{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}});
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto r = hem_level(g, seed);
    const auto sizes = r.assignment.cluster_sizes();
    CHECK(sizes.size() == 2);
    CHECK(std::count(sizes.begin(), sizes.end(), 2u) == 1);
    CHECK(r.coarse.n_edges() == 1);
    CHECK(r.coarse.weight(0, 1) == 2.0);
  }
}

TEST_CASE("hem_level on an empty graph") {
  CHECK_THROWS_AS(hem_level(GeneGraph{}, 1), EmptyGraphError);
}

TEST_CASE("AssignmentMap::validate") {
  AssignmentMap ok{0, {0, 0, 1}, 3, 2};
  CHECK_NOTHROW(ok.validate());
  AssignmentMap gap{0, {0, 0, 2}, 3, 3};
  CHECK_THROWS_AS(gap.validate(), ContractError);
  AssignmentMap triple{0, {0, 0, 0}, 3, 1};
  CHECK_THROWS_AS(triple.validate(), ContractError);
  AssignmentMap out_of_range{0, {0, 5, 1}, 3, 2};
  CHECK_THROWS_AS(out_of_range.validate(), ContractError);
}

TEST_CASE("build_hierarchy small cases") {
  auto pair = std::make_shared<const GeneGraph>(GeneGraph::from_edges({"a", "b"}, std::vector<Edge>{{0, 1, 1.0}}));
  const auto h = build_hierarchy(pair, 1, 3);
  CHECK(h.depth() == 1);
  CHECK(h.size_at(1) == 1);
  CHECK(h.expand_cluster(0, 0) == std::vector<std::string>{"a", "b"});

  try {
    build_hierarchy(pair, 3, 3);
    FAIL("expected level exhaustion");
  } catch (const LevelExhaustedError& e) {
    CHECK(e.level_reached() == 1);
  }
  CHECK_THROWS_AS(build_hierarchy(pair, 0, 3), ContractError);
}

TEST_CASE("expand_cluster composes the path example") {
  auto g = std::make_shared<const GeneGraph>(path_graph());
  auto first = hem_level_with_order(*g, {0, 1, 2, 3}, 0);
  auto coarse = std::make_shared<const GeneGraph>(first.coarse);
  auto second = hem_level_with_order(*coarse, {0, 1}, 1);
  std::vector<CoarseningLevel> levels;
  levels.push_back({first.assignment, coarse});
  levels.push_back({second.assignment, std::make_shared<const GeneGraph>(second.coarse)});
  const CoarseningHierarchy h(g, levels, 0);
  CHECK(h.expand_cluster(0, 0) == std::vector<std::string>{"a", "b"});
  CHECK(h.expand_cluster(0, 1) == std::vector<std::string>{"c", "d"});
  CHECK(h.expand_cluster(1, 0) == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK_THROWS_AS(h.expand_cluster(2, 0), IndexError);
  CHECK_THROWS_AS(h.expand_cluster(0, 2), IndexError);
  CHECK_THROWS_AS(h.expand_cluster(1, 1), IndexError);
}

TEST_CASE("coarse weights equal summed crossing weights (dense S^T A S)") {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto raw = oracle::random_raw_graph(12, 0.35, gen);
    const auto g = oracle::to_gene_graph(raw);
    const auto r = hem_level(g, static_cast<std::uint64_t>(trial));
    const auto s = oracle::assignment_matrix(r.assignment.cluster_of, r.assignment.n_coarse);
    const auto expected = oracle::coarse_adjacency(oracle::adjacency(raw), s);
    double worst = 0.0;
    for (std::size_t p = 0; p < r.assignment.n_coarse; ++p) {
      for (std::size_t q = 0; q < r.assignment.n_coarse; ++q) {
        worst = std::max(worst, std::abs(expected[p][q] - r.coarse.weight(p, q)));
      }
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("hierarchy properties over 100 random 64-node graphs") {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto g = std::make_shared<const GeneGraph>(random_connected_graph(64, 40, hash64(trial, 99)));
    const auto h = build_hierarchy(g, 3, trial);
    REQUIRE(h.depth() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
      const auto& lvl = h.level(l);
      check_assignment(lvl.assignment);
      CHECK(lvl.assignment.n_fine == h.size_at(l));
      CHECK(lvl.assignment.n_coarse == h.size_at(l + 1));
      CHECK(lvl.graph->n_nodes() == lvl.assignment.n_coarse);
      // Weight conservation.
      const auto& fine = *h.graph_at(l);
      const double lhs = lvl.graph->total_weight() + intra_weight(fine, lvl.assignment);
      CHECK(lhs == doctest::Approx(fine.total_weight()).epsilon(1e-12));
      // Partition of the original nodes.
      std::multiset<std::string> seen;
      for (std::size_t j = 0; j < h.size_at(l + 1); ++j) {
        const auto members = h.expand_cluster(l, j);
        CHECK(!members.empty());
        CHECK(members.size() <= (std::size_t{1} << (l + 1)));
        seen.insert(members.begin(), members.end());
      }
      CHECK(seen.size() == 64);
      CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 64);
    }
    // Composed map is total and agrees with stepwise composition.
    std::vector<std::size_t> step(64);
    for (std::size_t i = 0; i < 64; ++i) step[i] = i;
    for (std::size_t l = 0; l < 3; ++l) {
      for (auto& c : step) c = h.level(l).assignment.cluster_of[c];
      CHECK(h.composed(l) == step);
    }
    // Determinism and JSON round-trip.
    const auto again = build_hierarchy(g, 3, trial);
    CHECK(h.to_json() == again.to_json());
    const auto back = CoarseningHierarchy::from_json(h.to_json());
    CHECK(back.to_json() == h.to_json());
    CHECK(back.digest() == h.digest());
  }
}

TEST_CASE("different seeds usually give different hierarchies") {
  auto g = std::make_shared<const GeneGraph>(random_connected_graph(64, 40, 5));
  CHECK(build_hierarchy(g, 3, 1).to_json() != build_hierarchy(g, 3, 2).to_json());
}

TEST_CASE("hierarchy persistence and membership export") {
  const auto dir = oracle::scratch_dir("coarsen_io");
  auto g = std::make_shared<const GeneGraph>(random_connected_graph(40, 20, 8));
  const auto h = build_hierarchy(g, 2, 4);
  save_hierarchy(h, dir / "h.json");
  const auto back = load_hierarchy(dir / "h.json");
  CHECK(back.to_json() == h.to_json());
  CHECK(back.original() == h.original());

  h.write_membership_tsv(dir / "m.tsv");
  const auto lines = [&] {
    std::ifstream in(dir / "m.tsv");
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
  }();
  // One row per original gene per level, plus an optional header.
  CHECK((lines.size() == 80 || lines.size() == 81));

  oracle::write_file(dir / "bad.json", "{\"seed\": 1");
  CHECK_THROWS_AS(load_hierarchy(dir / "bad.json"), LoadError);
}
