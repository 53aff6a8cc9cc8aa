#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hgp/tensor.hpp"

namespace hgp {

struct Neighbor {
  std::size_t index;
  double weight;
};

struct Edge {
  std::size_t u;
  std::size_t v;
  double weight;
};

enum class DuplicatePolicy { kReject, kMax, kSum };

// Weighted undirected graph with stable string node identifiers, stored as a
// symmetric CSR structure. Neighbor lists are sorted by index. No self-loops,
// all weights strictly positive, ids unique.
class GeneGraph {
 public:
  GeneGraph() = default;

  // Builds from an arbitrary edge list. Self-loops and non-positive weights
  // are rejected; (u,v) and (v,u) are the same edge and are merged with
  // `duplicates`.
  static GeneGraph from_edges(std::vector<std::string> node_ids, std::span<const Edge> edges,
                              DuplicatePolicy duplicates = DuplicatePolicy::kReject);

  std::size_t n_nodes() const { return node_ids_.size(); }
  std::size_t n_edges() const { return n_edges_; }
  const std::vector<std::string>& node_ids() const { return node_ids_; }
  const std::string& id(std::size_t i) const { return node_ids_[i]; }
  std::optional<std::size_t> find(const std::string& id) const;

  std::span<const Neighbor> neighbors(std::size_t i) const {
    return {adjacency_.data() + offsets_[i], adjacency_.data() + offsets_[i + 1]};
  }
  // Weight of edge (i, j), or 0 when absent.
  double weight(std::size_t i, std::size_t j) const;
  double weighted_degree(std::size_t i) const;
  // Sum of weights over undirected edges, each counted once.
  double total_weight() const;

  // Each undirected edge once, u < v, ordered by (u, v).
  std::vector<Edge> edges() const;

  // Subgraph induced by `keep` (indices into this graph, kept in the given order).
  GeneGraph induced(std::span<const std::size_t> keep) const;

  friend bool operator==(const GeneGraph& a, const GeneGraph& b);

 private:
  std::vector<std::string> node_ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> offsets_{0};
  std::vector<Neighbor> adjacency_;
  std::size_t n_edges_ = 0;
};

struct EdgeListLoad {
  GeneGraph graph;
  std::size_t self_loops_dropped = 0;
  std::size_t below_threshold = 0;
  std::size_t duplicates_merged = 0;
  bool had_header = false;
};

// Reads `id_a<TAB>id_b<TAB>weight` rows. A first row whose third column is
// not numeric is treated as a header. Rows under `min_weight` are dropped,
// but their endpoints still become (possibly isolated) nodes so that
// largest_component can report them. Duplicates keep the maximum weight.
EdgeListLoad load_edge_list(const std::filesystem::path& path, double min_weight = 0.0);

struct ComponentSplit {
  GeneGraph graph;
  std::vector<std::string> dropped_ids;
};

// Induced subgraph on the largest connected component. Ties go to the
// component containing the smallest node index. Node order is preserved.
ComponentSplit largest_component(const GeneGraph& g);

std::size_t count_components(const GeneGraph& g);

enum class LambdaMode { kApproximate, kEstimated };

// Applies the rescaled symmetric-normalized Laplacian
//   L~ = (2 / lambda_max) * (I - D^-1/2 A D^-1/2) - I
// by sparse traversal. Isolated nodes get D^-1/2 = 0, i.e. L = I on them.
class LaplacianOperator {
 public:
  explicit LaplacianOperator(std::shared_ptr<const GeneGraph> graph,
                             LambdaMode mode = LambdaMode::kApproximate);

  const GeneGraph& graph() const { return *graph_; }
  std::size_t n_nodes() const { return graph_->n_nodes(); }
  double lambda_max() const { return lambda_max_; }
  LambdaMode mode() const { return mode_; }

  // One n x cols row-major block: out = L~ in. `out` must not alias `in`.
  void apply_block(std::span<const double> in, std::span<double> out, std::size_t cols) const;

  // x is {n, F} or {B, n, F}; the operator acts on the node axis.
  Tensor apply(const Tensor& x) const;

  // Unscaled normalized Laplacian, one block.
  void normalized_apply(std::span<const double> in, std::span<double> out, std::size_t cols) const;

 private:
  double estimate_lambda_max() const;

  std::shared_ptr<const GeneGraph> graph_;
  std::vector<double> inv_sqrt_degree_;
  LambdaMode mode_;
  double lambda_max_ = 2.0;
};

Tensor scaled_laplacian_apply(const LaplacianOperator& lap, const Tensor& x);

}  // namespace hgp
