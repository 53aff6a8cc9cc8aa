#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hgp/graph.hpp"

namespace hgp {

// Fine-to-coarse cluster map for one level. Equivalent to a binary matrix S
// with exactly one 1 per row; never materialized densely.
struct AssignmentMap {
  int level = 0;
  std::vector<std::size_t> cluster_of;
  std::size_t n_fine = 0;
  std::size_t n_coarse = 0;

  // Throws ContractError when the map is not a total, gap-free assignment
  // with cluster sizes in {1, 2}.
  void validate() const;
  std::vector<std::size_t> cluster_sizes() const;
};

struct CoarseningLevel {
  AssignmentMap assignment;
  std::shared_ptr<const GeneGraph> graph;  // coarse graph produced by this level
};

struct MatchResult {
  AssignmentMap assignment;
  GeneGraph coarse;
  double discarded_weight = 0.0;  // weight of edges that fell inside a cluster
};

// Node ids of coarse graphs: "<level>:<index>" with level counted from 1.
std::string supernode_id(int level, std::size_t index);

// One round of heavy-edge matching. Nodes are visited in a permutation drawn
// from `seed`; each unmatched node pairs with its heaviest unmatched neighbor
// (ties to the lowest index) or stays a singleton. Clusters are numbered by
// their smallest fine index. Coarse weights are sums of crossing fine edges.
MatchResult hem_level(const GeneGraph& g, std::uint64_t seed, int level = 0);

// Same rule with an explicit visit order (a permutation of node indices).
MatchResult hem_level_with_order(const GeneGraph& g, const std::vector<std::size_t>& visit_order, int level = 0);

class CoarseningHierarchy {
 public:
  CoarseningHierarchy(std::shared_ptr<const GeneGraph> original, std::vector<CoarseningLevel> levels,
                      std::uint64_t seed);

  const GeneGraph& original() const { return *original_; }
  std::shared_ptr<const GeneGraph> original_ptr() const { return original_; }
  std::size_t depth() const { return levels_.size(); }
  std::uint64_t seed() const { return seed_; }
  const CoarseningLevel& level(std::size_t l) const { return levels_.at(l); }
  const std::vector<CoarseningLevel>& levels() const { return levels_; }

  // Graph at the input of level l: the original graph for l = 0, the coarse
  // graph of level l-1 otherwise. l == depth() gives the coarsest graph.
  std::shared_ptr<const GeneGraph> graph_at(std::size_t l) const;
  // Node count N_l at the input of level l (l in [0, depth]).
  std::size_t size_at(std::size_t l) const;

  // Original-node -> supernode map after applying levels 0..l.
  const std::vector<std::size_t>& composed(std::size_t l) const { return composed_.at(l); }

  // Original node ids whose composed assignment through level `level` lands
  // on `supernode`, in original node order.
  std::vector<std::string> expand_cluster(std::size_t level, std::size_t supernode) const;

  std::string to_json() const;
  static CoarseningHierarchy from_json(const std::string& text);
  std::uint64_t digest() const;

  // `level<TAB>supernode<TAB>gene_id` rows for every level, levels counted from 0.
  void write_membership_tsv(const std::filesystem::path& path) const;

 private:
  std::shared_ptr<const GeneGraph> original_;
  std::vector<CoarseningLevel> levels_;
  std::vector<std::vector<std::size_t>> composed_;
  std::uint64_t seed_;
};

// Applies hem_level n_levels times; level l uses hash64(seed, l).
CoarseningHierarchy build_hierarchy(std::shared_ptr<const GeneGraph> g, int n_levels, std::uint64_t seed);

CoarseningHierarchy load_hierarchy(const std::filesystem::path& path);
void save_hierarchy(const CoarseningHierarchy& h, const std::filesystem::path& path);

}  // namespace hgp
