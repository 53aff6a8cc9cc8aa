#include "hgp/synth.hpp"

#include <cstdio>
#include <deque>
#include <set>

#include "hgp/error.hpp"
#include "hgp/rng.hpp"

namespace hgp {

using ojson = nlohmann::ordered_json;

void SyntheticSpec::validate() const {
  if (n_nodes < 2) throw SpecError("synthetic graph needs at least 2 nodes");
  if (n_modules == 0 || module_size == 0) throw SpecError("need at least one non-empty module");
  if (n_modules * module_size > n_nodes) {
    throw SpecError("modules need " + std::to_string(n_modules * module_size) + " genes but the graph has " +
                    std::to_string(n_nodes));
  }
  if (samples_per_class == 0) throw SpecError("samples_per_class must be positive");
  if (!(noise >= 0.0)) throw SpecError("noise must be nonnegative");
}

ojson synthetic_to_json(const SyntheticSpec& s) {
  ojson j;
  j["n_nodes"] = s.n_nodes;
  j["extra_edges"] = s.extra_edges;
  j["n_modules"] = s.n_modules;
  j["module_size"] = s.module_size;
  j["effect"] = s.effect;
  j["noise"] = s.noise;
  j["baseline"] = s.baseline;
  j["samples_per_class"] = s.samples_per_class;
  return j;
}

SyntheticSpec synthetic_from_json(const ojson& doc) {
  static const std::set<std::string> known{"n_nodes", "extra_edges", "n_modules", "module_size",
                                           "effect",  "noise",       "baseline",  "samples_per_class"};
  if (!doc.is_object()) throw ConfigError("synthetic: expected an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("synthetic: unknown key '" + key + "'");
  }
  SyntheticSpec s;
  try {
    if (doc.contains("n_nodes")) s.n_nodes = doc["n_nodes"].get<std::size_t>();
    if (doc.contains("extra_edges")) s.extra_edges = doc["extra_edges"].get<std::size_t>();
    if (doc.contains("n_modules")) s.n_modules = doc["n_modules"].get<std::size_t>();
    if (doc.contains("module_size")) s.module_size = doc["module_size"].get<std::size_t>();
    if (doc.contains("effect")) s.effect = doc["effect"].get<double>();
    if (doc.contains("noise")) s.noise = doc["noise"].get<double>();
    if (doc.contains("baseline")) s.baseline = doc["baseline"].get<double>();
    if (doc.contains("samples_per_class")) s.samples_per_class = doc["samples_per_class"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic: ") + e.what());
  }
  return s;
}

std::vector<std::string> SyntheticData::planted_genes() const {
  std::vector<std::string> out;
  for (const auto& m : modules) out.insert(out.end(), m.begin(), m.end());
  return out;
}

namespace {

std::string numbered(const std::string& prefix, std::size_t i, std::size_t total) {
  const int width = static_cast<int>(std::to_string(total > 0 ? total - 1 : 0).size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix.c_str(), width, i);
  return buf;
}

GeneGraph random_graph_with(std::size_t n, std::size_t extra, Rng& rng, const std::string& prefix) {
  std::set<std::pair<std::size_t, std::size_t>> present;
  std::vector<Edge> edges;
  auto weight = [&] { return 1.0 - rng.uniform(); };
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t parent = static_cast<std::size_t>(rng.below(i));
    present.insert({parent, i});
    edges.push_back({parent, i, weight()});
  }
  const std::size_t max_edges = n * (n - 1) / 2;
  const std::size_t target = std::min(max_edges, edges.size() + extra);
  std::size_t attempts = 0;
  while (edges.size() < target && attempts < 50 * (extra + 1)) {
    ++attempts;
    std::size_t u = static_cast<std::size_t>(rng.below(n));
    std::size_t v = static_cast<std::size_t>(rng.below(n));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    if (!present.insert({u, v}).second) continue;
    edges.push_back({u, v, weight()});
  }
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(numbered(prefix, i, n));
  return GeneGraph::from_edges(std::move(ids), edges);
}

}  // namespace

GeneGraph random_connected_graph(std::size_t n_nodes, std::size_t extra_edges, std::uint64_t seed,
                                 const std::string& id_prefix) {
  if (n_nodes == 0) throw SpecError("graph needs at least one node");
  Rng rng(seed);
  return random_graph_with(n_nodes, extra_edges, rng, id_prefix);
}

SyntheticData synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(hash64(spec.seed, seed_stream::kSynth));
  SyntheticData data;
  data.graph = random_graph_with(spec.n_nodes, spec.extra_edges, rng, "g");
  const GeneGraph& g = data.graph;
  const std::size_t n = g.n_nodes();

  std::vector<bool> used(n, false);
  std::vector<bool> planted(n, false);
  for (std::size_t m = 0; m < spec.n_modules; ++m) {
    std::vector<std::size_t> members;
    for (std::size_t start : rng.permutation(n)) {
      if (used[start]) continue;
      members.clear();
      std::vector<bool> queued(n, false);
      std::deque<std::size_t> queue{start};
      queued[start] = true;
      while (!queue.empty() && members.size() < spec.module_size) {
        const std::size_t u = queue.front();
        queue.pop_front();
        members.push_back(u);
        for (const Neighbor& nb : g.neighbors(u)) {
          if (!used[nb.index] && !queued[nb.index]) {
            queued[nb.index] = true;
            queue.push_back(nb.index);
          }
        }
      }
      if (members.size() == spec.module_size) break;
    }
    if (members.size() != spec.module_size) {
      throw SpecError("could not place connected module " + std::to_string(m) + " of size " +
                      std::to_string(spec.module_size));
    }
    std::vector<std::string> ids;
    for (std::size_t u : members) {
      used[u] = true;
      planted[u] = true;
      ids.push_back(g.id(u));
    }
    data.modules.push_back(std::move(ids));
  }

  ExpressionDataset& ds = data.dataset;
  const std::size_t total = 2 * spec.samples_per_class;
  ds.gene_ids = g.node_ids();
  ds.label_names = {"class0", "class1"};
  ds.values = Tensor({total, n});
  ds.missing.assign(total * n, 0);
  for (std::size_t s = 0; s < total; ++s) {
    const int label = static_cast<int>(s % 2);
    ds.sample_ids.push_back(numbered("s", s, total));
    ds.labels.push_back(label);
    for (std::size_t j = 0; j < n; ++j) {
      const double shift = (label == 1 && planted[j]) ? spec.effect : 0.0;
      ds.values.at(s, j) = spec.baseline + shift + spec.noise * rng.normal();
    }
  }
  return data;
}

}  // namespace hgp
