#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgp/dataio.hpp"
#include "hgp/gnn.hpp"
#include "hgp/interpret.hpp"
#include "hgp/synth.hpp"
#include "hgp/train.hpp"

namespace hgp::cli {

inline constexpr int kRunConfigFormat = 1;
inline constexpr int kManifestFormat = 1;

struct GraphSection {
  std::optional<std::filesystem::path> edges;
  double min_weight = 0.0;
  std::optional<std::filesystem::path> hierarchy;  // reuse instead of coarsening again
};

struct CoarsenSection {
  int levels = 7;
};

struct DataSection {
  std::optional<std::filesystem::path> expression;
  Orientation orientation = Orientation::kGenesAsRows;
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> mapping;
  double missing_threshold = 0.20;
  bool log_transform = false;
  // Used when no expression file is given; also supplies the graph when
  // graph.edges is absent.
  std::optional<SyntheticSpec> synthetic;
};

struct ExplainSection {
  int target_class = 1;
  std::size_t top_k = 10;
  SupernodeReduction reduction = SupernodeReduction::kMean;
  std::string partition = "test";  // train | val | test | all
  unsigned threads = 0;            // 0 = hardware concurrency
};

struct EnrichSection {
  std::optional<std::filesystem::path> gmt;
  std::size_t top_supernodes = 5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  GraphSection graph;
  CoarsenSection coarsen;
  DataSection data;
  ArchitectureConfig architecture;
  TrainConfig train;
  ExplainSection explain;
  EnrichSection enrich;

  // Checks every section that does not need input data.
  void validate() const;
};

// Relative paths are resolved against `base_dir`. Unknown keys anywhere are
// a ConfigError.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
// Every field with defaults filled in.
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

nlohmann::ordered_json version_json();

// Entry point of the `hgp` executable. Returns the process exit code:
// 0 success, 1 user or configuration error, 2 internal or numeric error.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hgp::cli
