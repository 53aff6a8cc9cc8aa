#include "hgp/coarsen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hgp/digest.hpp"
#include "hgp/error.hpp"
#include "hgp/rng.hpp"

namespace hgp {

using ojson = nlohmann::ordered_json;

void AssignmentMap::validate() const {
  if (cluster_of.size() != n_fine) throw ContractError("assignment: cluster_of length != n_fine");
  std::vector<std::size_t> sizes(n_coarse, 0);
  for (std::size_t c : cluster_of) {
    if (c >= n_coarse) throw ContractError("assignment: cluster index out of range");
    ++sizes[c];
  }
  for (std::size_t s : sizes) {
    if (s == 0) throw ContractError("assignment: cluster indices are not contiguous");
    if (s > 2) throw ContractError("assignment: cluster larger than a pair");
  }
}

std::vector<std::size_t> AssignmentMap::cluster_sizes() const {
  std::vector<std::size_t> sizes(n_coarse, 0);
  for (std::size_t c : cluster_of) ++sizes[c];
  return sizes;
}

std::string supernode_id(int level, std::size_t index) {
  return std::to_string(level) + ":" + std::to_string(index);
}

namespace {

GeneGraph coarse_graph(const GeneGraph& g, const AssignmentMap& a, double& discarded) {
  std::map<std::pair<std::size_t, std::size_t>, double> crossing;
  discarded = 0.0;
  for (const Edge& e : g.edges()) {
    const std::size_t cu = a.cluster_of[e.u];
    const std::size_t cv = a.cluster_of[e.v];
    if (cu == cv) {
      discarded += e.weight;
      continue;
    }
    crossing[std::minmax(cu, cv)] += e.weight;
  }
  std::vector<Edge> edges;
  edges.reserve(crossing.size());
  for (const auto& [key, w] : crossing) edges.push_back({key.first, key.second, w});
  std::vector<std::string> ids;
  ids.reserve(a.n_coarse);
  for (std::size_t j = 0; j < a.n_coarse; ++j) ids.push_back(supernode_id(a.level + 1, j));
  return GeneGraph::from_edges(std::move(ids), edges);
}

}  // namespace

MatchResult hem_level_with_order(const GeneGraph& g, const std::vector<std::size_t>& visit_order, int level) {
  const std::size_t n = g.n_nodes();
  if (n == 0) throw EmptyGraphError("heavy-edge matching on an empty graph");
  if (visit_order.size() != n) throw ContractError("visit order must be a permutation of all nodes");

  constexpr std::size_t kUnmatched = SIZE_MAX;
  std::vector<std::size_t> mate(n, kUnmatched);
  std::vector<bool> seen(n, false);
  for (std::size_t u : visit_order) {
    if (u >= n || seen[u]) throw ContractError("visit order must be a permutation of all nodes");
    seen[u] = true;
    if (mate[u] != kUnmatched) continue;
    std::size_t best = kUnmatched;
    double best_weight = 0.0;
    // Neighbors are sorted by index, so strict '>' keeps the lowest index on ties.
    for (const Neighbor& nb : g.neighbors(u)) {
      if (mate[nb.index] != kUnmatched) continue;
      if (best == kUnmatched || nb.weight > best_weight) {
        best = nb.index;
        best_weight = nb.weight;
      }
    }
    if (best == kUnmatched) {
      mate[u] = u;
    } else {
      mate[u] = best;
      mate[best] = u;
    }
  }

  MatchResult result;
  AssignmentMap& a = result.assignment;
  a.level = level;
  a.n_fine = n;
  a.cluster_of.assign(n, kUnmatched);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (a.cluster_of[i] != kUnmatched) continue;
    a.cluster_of[i] = next;
    a.cluster_of[mate[i]] = next;
    ++next;
  }
  a.n_coarse = next;
  result.coarse = coarse_graph(g, a, result.discarded_weight);
  return result;
}

MatchResult hem_level(const GeneGraph& g, std::uint64_t seed, int level) {
  if (g.n_nodes() == 0) throw EmptyGraphError("heavy-edge matching on an empty graph");
  Rng rng(seed);
  return hem_level_with_order(g, rng.permutation(g.n_nodes()), level);
}

CoarseningHierarchy::CoarseningHierarchy(std::shared_ptr<const GeneGraph> original,
                                         std::vector<CoarseningLevel> levels, std::uint64_t seed)
    : original_(std::move(original)), levels_(std::move(levels)), seed_(seed) {
  if (!original_) throw ContractError("hierarchy needs an original graph");
  std::vector<std::size_t> current(original_->n_nodes());
  std::iota(current.begin(), current.end(), std::size_t{0});
  std::size_t n = original_->n_nodes();
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const AssignmentMap& a = levels_[l].assignment;
    if (a.n_fine != n) throw ContractError("hierarchy level " + std::to_string(l) + " size mismatch");
    a.validate();
    if (!levels_[l].graph || levels_[l].graph->n_nodes() != a.n_coarse) {
      throw ContractError("hierarchy level " + std::to_string(l) + " coarse graph size mismatch");
    }
    for (std::size_t& c : current) c = a.cluster_of[c];
    composed_.push_back(current);
    n = a.n_coarse;
  }
}

std::shared_ptr<const GeneGraph> CoarseningHierarchy::graph_at(std::size_t l) const {
  if (l > levels_.size()) throw IndexError("hierarchy level " + std::to_string(l) + " out of range");
  return l == 0 ? original_ : levels_[l - 1].graph;
}

std::size_t CoarseningHierarchy::size_at(std::size_t l) const { return graph_at(l)->n_nodes(); }

std::vector<std::string> CoarseningHierarchy::expand_cluster(std::size_t level, std::size_t supernode) const {
  if (level >= levels_.size()) {
    throw IndexError("level " + std::to_string(level) + " out of range (depth " + std::to_string(levels_.size()) + ")");
  }
  if (supernode >= levels_[level].assignment.n_coarse) {
    throw IndexError("supernode " + std::to_string(supernode) + " out of range at level " + std::to_string(level));
  }
  std::vector<std::string> ids;
  const auto& map = composed_[level];
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] == supernode) ids.push_back(original_->id(i));
  }
  return ids;
}

namespace {

ojson edges_json(const GeneGraph& g) {
  ojson arr = ojson::array();
  for (const Edge& e : g.edges()) arr.push_back(ojson::array({e.u, e.v, e.weight}));
  return arr;
}

std::vector<Edge> edges_from_json(const ojson& arr, std::size_t n) {
  std::vector<Edge> edges;
  edges.reserve(arr.size());
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 3) throw LoadError("hierarchy: malformed edge entry");
    Edge edge{e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<double>()};
    if (edge.u >= n || edge.v >= n) throw LoadError("hierarchy: edge endpoint out of range");
    edges.push_back(edge);
  }
  return edges;
}

}  // namespace

std::string CoarseningHierarchy::to_json() const {
  ojson doc;
  doc["format_version"] = 1;
  doc["seed"] = seed_;
  doc["node_ids"] = original_->node_ids();
  doc["edges"] = edges_json(*original_);
  ojson levels = ojson::array();
  for (const CoarseningLevel& lvl : levels_) {
    ojson item;
    item["n_fine"] = lvl.assignment.n_fine;
    item["n_coarse"] = lvl.assignment.n_coarse;
    item["cluster_of"] = lvl.assignment.cluster_of;
    item["coarse_edges"] = edges_json(*lvl.graph);
    levels.push_back(std::move(item));
  }
  doc["levels"] = std::move(levels);
  return doc.dump();
}

CoarseningHierarchy CoarseningHierarchy::from_json(const std::string& text) {
  try {
    const ojson doc = ojson::parse(text);
    if (doc.at("format_version").get<int>() != 1) throw LoadError("hierarchy: unsupported format_version");
    auto ids = doc.at("node_ids").get<std::vector<std::string>>();
    const std::size_t n0 = ids.size();
    auto original = std::make_shared<const GeneGraph>(
        GeneGraph::from_edges(std::move(ids), edges_from_json(doc.at("edges"), n0)));
    std::vector<CoarseningLevel> levels;
    std::shared_ptr<const GeneGraph> fine = original;
    int l = 0;
    for (const auto& item : doc.at("levels")) {
      AssignmentMap a;
      a.level = l;
      a.n_fine = item.at("n_fine").get<std::size_t>();
      a.n_coarse = item.at("n_coarse").get<std::size_t>();
      a.cluster_of = item.at("cluster_of").get<std::vector<std::size_t>>();
      if (a.n_fine != fine->n_nodes()) throw LoadError("hierarchy: level " + std::to_string(l) + " n_fine mismatch");
      a.validate();
      double discarded = 0.0;
      auto coarse = std::make_shared<const GeneGraph>(coarse_graph(*fine, a, discarded));
      std::vector<std::string> coarse_ids = coarse->node_ids();
      const GeneGraph stored =
          GeneGraph::from_edges(std::move(coarse_ids), edges_from_json(item.at("coarse_edges"), a.n_coarse));
      if (!(stored == *coarse)) {
        throw LoadError("hierarchy: level " + std::to_string(l) + " coarse edges disagree with its assignment");
      }
      levels.push_back({std::move(a), coarse});
      fine = coarse;
      ++l;
    }
    return CoarseningHierarchy(std::move(original), std::move(levels), doc.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("hierarchy: ") + e.what());
  } catch (const ContractError& e) {
    throw LoadError(std::string("hierarchy: ") + e.what());
  }
}

std::uint64_t CoarseningHierarchy::digest() const { return fnv1a64(to_json()); }

void CoarseningHierarchy::write_membership_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "level\tsupernode\tgene_id\n";
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const auto& map = composed_[l];
    std::vector<std::vector<std::size_t>> members(levels_[l].assignment.n_coarse);
    for (std::size_t i = 0; i < map.size(); ++i) members[map[i]].push_back(i);
    for (std::size_t s = 0; s < members.size(); ++s) {
      for (std::size_t i : members[s]) out << l << '\t' << s << '\t' << original_->id(i) << '\n';
    }
  }
}

CoarseningHierarchy build_hierarchy(std::shared_ptr<const GeneGraph> g, int n_levels, std::uint64_t seed) {
  if (!g) throw ContractError("build_hierarchy needs a graph");
  if (n_levels < 1) throw ContractError("n_levels must be >= 1");
  if (g->n_nodes() == 0) throw EmptyGraphError("cannot coarsen an empty graph");
  std::vector<CoarseningLevel> levels;
  std::shared_ptr<const GeneGraph> current = g;
  for (int l = 0; l < n_levels; ++l) {
    if (current->n_nodes() == 1) throw LevelExhaustedError(l, n_levels);
    MatchResult r = hem_level(*current, hash64(seed, static_cast<std::uint64_t>(l)), l);
    auto coarse = std::make_shared<const GeneGraph>(std::move(r.coarse));
    levels.push_back({std::move(r.assignment), coarse});
    current = coarse;
  }
  return CoarseningHierarchy(std::move(g), std::move(levels), seed);
}

CoarseningHierarchy load_hierarchy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return CoarseningHierarchy::from_json(ss.str());
}

void save_hierarchy(const CoarseningHierarchy& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << h.to_json() << '\n';
}

}  // namespace hgp
