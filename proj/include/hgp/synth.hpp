#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgp/dataio.hpp"
#include "hgp/graph.hpp"

namespace hgp {

// Planted-module benchmark: class 1 samples get +effect on the genes of a few
// connected modules; everything else is baseline + N(0, noise^2).
struct SyntheticSpec {
  std::size_t n_nodes = 256;
  std::size_t extra_edges = 256;  // added on top of a random spanning tree
  std::size_t n_modules = 2;
  std::size_t module_size = 16;
  double effect = 3.0;
  double noise = 1.0;
  double baseline = 5.0;
  std::size_t samples_per_class = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json synthetic_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_from_json(const nlohmann::ordered_json& doc);

struct SyntheticData {
  GeneGraph graph;
  ExpressionDataset dataset;  // genes in graph node order, labels "class0"/"class1"
  std::vector<std::vector<std::string>> modules;

  std::vector<std::string> planted_genes() const;
};

SyntheticData synth_generate(const SyntheticSpec& spec);

// Random connected graph: random recursive spanning tree plus `extra_edges`
// random chords, weights uniform in (0, 1].
GeneGraph random_connected_graph(std::size_t n_nodes, std::size_t extra_edges, std::uint64_t seed,
                                 const std::string& id_prefix = "g");

}  // namespace hgp
