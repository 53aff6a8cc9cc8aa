#include "hgp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <map>
#include <unordered_map>

#include "hgp/error.hpp"
#include "hgp/rng.hpp"
#include "hgp/tsv.hpp"

namespace hgp {

GeneGraph GeneGraph::from_edges(std::vector<std::string> node_ids, std::span<const Edge> edges,
                                DuplicatePolicy duplicates) {
  GeneGraph g;
  const std::size_t n = node_ids.size();
  g.index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.index_.emplace(node_ids[i], i).second) {
      throw ContractError("duplicate node id '" + node_ids[i] + "'");
    }
  }
  g.node_ids_ = std::move(node_ids);

  std::map<std::pair<std::size_t, std::size_t>, double> merged;
  for (const Edge& e : edges) {
    if (e.u >= n || e.v >= n) throw IndexError("edge endpoint out of range");
    if (e.u == e.v) throw ContractError("self-loop on node '" + g.node_ids_[e.u] + "'");
    if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
      throw ContractError("edge weights must be finite and positive");
    }
    const auto key = std::minmax(e.u, e.v);
    auto [it, inserted] = merged.emplace(key, e.weight);
    if (!inserted) {
      switch (duplicates) {
        case DuplicatePolicy::kReject:
          throw ContractError("duplicate edge (" + g.node_ids_[key.first] + ", " +
                              g.node_ids_[key.second] + ")");
        case DuplicatePolicy::kMax:
          it->second = std::max(it->second, e.weight);
          break;
        case DuplicatePolicy::kSum:
          it->second += e.weight;
          break;
      }
    }
  }

  std::vector<std::size_t> degree(n, 0);
  for (const auto& [key, w] : merged) {
    ++degree[key.first];
    ++degree[key.second];
  }
  g.offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] = g.offsets_[i] + degree[i];
  g.adjacency_.resize(g.offsets_[n]);
  std::vector<std::size_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
  // The map iterates in (u, v) order, so every row ends up sorted by neighbor.
  for (const auto& [key, w] : merged) {
    g.adjacency_[cursor[key.first]++] = {key.second, w};
  }
  for (const auto& [key, w] : merged) {
    g.adjacency_[cursor[key.second]++] = {key.first, w};
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(g.adjacency_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[i]),
              g.adjacency_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[i + 1]),
              [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; });
  }
  g.n_edges_ = merged.size();
  return g;
}

std::optional<std::size_t> GeneGraph::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double GeneGraph::weight(std::size_t i, std::size_t j) const {
  const auto row = neighbors(i);
  auto it = std::lower_bound(row.begin(), row.end(), j,
                             [](const Neighbor& nb, std::size_t idx) { return nb.index < idx; });
  if (it != row.end() && it->index == j) return it->weight;
  return 0.0;
}

double GeneGraph::weighted_degree(std::size_t i) const {
  double d = 0.0;
  for (const Neighbor& nb : neighbors(i)) d += nb.weight;
  return d;
}

double GeneGraph::total_weight() const {
  double total = 0.0;
  for (std::size_t i = 0; i < n_nodes(); ++i) {
    for (const Neighbor& nb : neighbors(i)) {
      if (nb.index > i) total += nb.weight;
    }
  }
  return total;
}

std::vector<Edge> GeneGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(n_edges_);
  for (std::size_t i = 0; i < n_nodes(); ++i) {
    for (const Neighbor& nb : neighbors(i)) {
      if (nb.index > i) out.push_back({i, nb.index, nb.weight});
    }
  }
  return out;
}

GeneGraph GeneGraph::induced(std::span<const std::size_t> keep) const {
  std::vector<std::size_t> remap(n_nodes(), SIZE_MAX);
  std::vector<std::string> ids;
  ids.reserve(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    if (keep[k] >= n_nodes()) throw IndexError("induced: node index out of range");
    remap[keep[k]] = k;
    ids.push_back(node_ids_[keep[k]]);
  }
  std::vector<Edge> sub;
  for (std::size_t i = 0; i < n_nodes(); ++i) {
    if (remap[i] == SIZE_MAX) continue;
    for (const Neighbor& nb : neighbors(i)) {
      if (nb.index > i && remap[nb.index] != SIZE_MAX) {
        sub.push_back({remap[i], remap[nb.index], nb.weight});
      }
    }
  }
  return from_edges(std::move(ids), sub);
}

bool operator==(const GeneGraph& a, const GeneGraph& b) {
  if (a.node_ids_ != b.node_ids_ || a.offsets_ != b.offsets_) return false;
  return std::equal(a.adjacency_.begin(), a.adjacency_.end(), b.adjacency_.begin(), b.adjacency_.end(),
                    [](const Neighbor& x, const Neighbor& y) { return x.index == y.index && x.weight == y.weight; });
}

EdgeListLoad load_edge_list(const std::filesystem::path& path, double min_weight) {
  if (!(min_weight >= 0.0)) throw ContractError("min_weight must be nonnegative");
  const auto lines = tsv::read_lines(path);
  const std::string source = path.string();

  EdgeListLoad result;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  auto intern = [&](const std::string& id) {
    auto [it, inserted] = index.emplace(id, ids.size());
    if (inserted) ids.push_back(id);
    return it->second;
  };

  std::map<std::pair<std::size_t, std::size_t>, double> best;
  bool first_row = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    const auto fields = tsv::split(line);
    if (fields.size() != 3) {
      throw ParseError(source, ln + 1, "expected 3 tab-separated columns, found " + std::to_string(fields.size()));
    }
    const auto weight = tsv::parse_double(fields[2]);
    if (!weight) {
      if (first_row) {
        first_row = false;
        result.had_header = true;
        continue;
      }
      throw ParseError(source, ln + 1, "non-numeric weight '" + fields[2] + "'");
    }
    first_row = false;
    if (fields[0].empty() || fields[1].empty()) throw ParseError(source, ln + 1, "empty node identifier");
    if (!std::isfinite(*weight) || *weight < 0.0) {
      throw ParseError(source, ln + 1, "weight must be finite and nonnegative");
    }
    const std::size_t a = intern(fields[0]);
    const std::size_t b = intern(fields[1]);
    if (a == b) {
      ++result.self_loops_dropped;
      continue;
    }
    if (*weight < min_weight || *weight == 0.0) {
      ++result.below_threshold;
      continue;
    }
    const auto key = std::minmax(a, b);
    auto [it, inserted] = best.emplace(key, *weight);
    if (!inserted) {
      ++result.duplicates_merged;
      it->second = std::max(it->second, *weight);
    }
  }
  if (result.self_loops_dropped > 0) {
    std::cerr << "warning: " << source << ": dropped " << result.self_loops_dropped << " self-loop row(s)\n";
  }
  if (best.empty()) throw EmptyGraphError(source + ": no edges left after filtering");

  std::vector<Edge> edges;
  edges.reserve(best.size());
  for (const auto& [key, w] : best) edges.push_back({key.first, key.second, w});
  result.graph = GeneGraph::from_edges(std::move(ids), edges);
  return result;
}

namespace {

std::vector<std::size_t> component_labels(const GeneGraph& g, std::size_t& n_components) {
  std::vector<std::size_t> label(g.n_nodes(), SIZE_MAX);
  n_components = 0;
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < g.n_nodes(); ++s) {
    if (label[s] != SIZE_MAX) continue;
    label[s] = n_components;
    queue.push_back(s);
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (const Neighbor& nb : g.neighbors(u)) {
        if (label[nb.index] == SIZE_MAX) {
          label[nb.index] = n_components;
          queue.push_back(nb.index);
        }
      }
    }
    ++n_components;
  }
  return label;
}

}  // namespace

std::size_t count_components(const GeneGraph& g) {
  std::size_t n = 0;
  component_labels(g, n);
  return n;
}

ComponentSplit largest_component(const GeneGraph& g) {
  std::size_t n_components = 0;
  const auto label = component_labels(g, n_components);
  // Components are labelled in order of their smallest node index, so the
  // first maximum wins ties.
  std::vector<std::size_t> sizes(n_components, 0);
  for (std::size_t l : label) ++sizes[l];
  const std::size_t best =
      n_components == 0 ? 0 : static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  std::vector<std::size_t> keep;
  ComponentSplit out;
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    if (label[i] == best) {
      keep.push_back(i);
    } else {
      out.dropped_ids.push_back(g.id(i));
    }
  }
  out.graph = g.induced(keep);
  return out;
}

LaplacianOperator::LaplacianOperator(std::shared_ptr<const GeneGraph> graph, LambdaMode mode)
    : graph_(std::move(graph)), mode_(mode) {
  if (!graph_) throw ContractError("LaplacianOperator needs a graph");
  const std::size_t n = graph_->n_nodes();
  inv_sqrt_degree_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = graph_->weighted_degree(i);
    inv_sqrt_degree_[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  if (mode_ == LambdaMode::kEstimated) lambda_max_ = estimate_lambda_max();
}

void LaplacianOperator::normalized_apply(std::span<const double> in, std::span<double> out,
                                         std::size_t cols) const {
  const std::size_t n = n_nodes();
  if (in.size() != n * cols || out.size() != n * cols) throw ShapeError("laplacian block size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double* yi = out.data() + i * cols;
    const double* xi = in.data() + i * cols;
    for (std::size_t c = 0; c < cols; ++c) yi[c] = xi[c];
    const double si = inv_sqrt_degree_[i];
    for (const Neighbor& nb : graph_->neighbors(i)) {
      const double a = si * nb.weight * inv_sqrt_degree_[nb.index];
      const double* xj = in.data() + nb.index * cols;
      for (std::size_t c = 0; c < cols; ++c) yi[c] -= a * xj[c];
    }
  }
}

void LaplacianOperator::apply_block(std::span<const double> in, std::span<double> out, std::size_t cols) const {
  normalized_apply(in, out, cols);
  const double scale = 2.0 / lambda_max_;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = scale * out[k] - in[k];
}

Tensor LaplacianOperator::apply(const Tensor& x) const {
  const std::size_t n = n_nodes();
  std::size_t batch = 1;
  std::size_t cols = 0;
  if (x.rank() == 2 && x.dim(0) == n) {
    cols = x.dim(1);
  } else if (x.rank() == 3 && x.dim(1) == n) {
    batch = x.dim(0);
    cols = x.dim(2);
  } else {
    throw ShapeError("laplacian apply: expected {" + std::to_string(n) + ", F} or {B, " + std::to_string(n) +
                     ", F}, got " + shape_string(x.shape()));
  }
  Tensor y(x.shape());
  const std::size_t block = n * cols;
  for (std::size_t b = 0; b < batch; ++b) {
    apply_block(x.values().subspan(b * block, block), y.values().subspan(b * block, block), cols);
  }
  return y;
}

double LaplacianOperator::estimate_lambda_max() const {
  constexpr int kIterations = 50;
  constexpr double kTolerance = 1e-6;
  const std::size_t n = n_nodes();
  if (n == 0) return 2.0;
  std::vector<double> v(n), w(n);
  Rng rng(seed_stream::kLaplacian);
  for (double& e : v) e = rng.uniform(-1.0, 1.0);
  auto normalize = [](std::vector<double>& u) {
    double s = 0.0;
    for (double e : u) s += e * e;
    s = std::sqrt(s);
    if (s > 0.0) {
      for (double& e : u) e /= s;
    }
    return s;
  };
  normalize(v);
  double lambda = 0.0;
  for (int it = 0; it < kIterations; ++it) {
    normalized_apply(v, w, 1);
    double rayleigh = 0.0;
    for (std::size_t i = 0; i < n; ++i) rayleigh += v[i] * w[i];
    const double previous = lambda;
    lambda = rayleigh;
    if (normalize(w) == 0.0) break;
    v.swap(w);
    if (it > 0 && std::abs(lambda - previous) < kTolerance) break;
  }
  return std::clamp(lambda, 1e-12, 2.0);
}

Tensor scaled_laplacian_apply(const LaplacianOperator& lap, const Tensor& x) { return lap.apply(x); }

}  // namespace hgp
