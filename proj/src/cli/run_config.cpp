#include <fstream>
#include <set>
#include <sstream>

#include "hgp/cli.hpp"
#include "hgp/error.hpp"

namespace hgp::cli {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const ojson& doc, const std::string& section, const std::set<std::string>& known) {
  if (!doc.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

std::optional<fs::path> path_field(const ojson& doc, const char* key, const fs::path& base) {
  if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
  fs::path p(doc[key].get<std::string>());
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

ojson path_json(const std::optional<fs::path>& p) { return p ? ojson(p->string()) : ojson(nullptr); }

}  // namespace

void RunConfig::validate() const {
  if (graph.min_weight < 0.0) throw ConfigError("graph: min_weight must be nonnegative");
  if (coarsen.levels < 0) throw ConfigError("coarsen: levels must be nonnegative");
  if (!(data.missing_threshold >= 0.0 && data.missing_threshold <= 1.0)) {
    throw ConfigError("data: missing_threshold must be in [0, 1]");
  }
  if (data.synthetic) data.synthetic->validate();
  if (architecture.n_levels > coarsen.levels && !graph.hierarchy) {
    throw ConfigError("architecture: levels (" + std::to_string(architecture.n_levels) +
                      ") exceeds coarsen.levels (" + std::to_string(coarsen.levels) + ")");
  }
  architecture.validate(static_cast<std::size_t>(std::max(architecture.n_levels, 0)));
  train.validate();
  static const std::set<std::string> partitions{"train", "val", "test", "all"};
  if (!partitions.count(explain.partition)) {
    throw ConfigError("explain: partition must be train, val, test or all");
  }
  if (explain.target_class < 0) throw ConfigError("explain: class must be nonnegative");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(doc, "config",
                 {"format_version", "seed", "graph", "coarsen", "data", "architecture", "train", "explain", "enrich"});
  RunConfig c;
  try {
    if (doc.contains("format_version") && doc["format_version"].get<int>() != kRunConfigFormat) {
      throw ConfigError("config: unsupported format_version");
    }
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("graph")) {
      const auto& g = doc["graph"];
      reject_unknown(g, "graph", {"edges", "min_weight", "hierarchy"});
      c.graph.edges = path_field(g, "edges", base_dir);
      c.graph.hierarchy = path_field(g, "hierarchy", base_dir);
      if (g.contains("min_weight")) c.graph.min_weight = g["min_weight"].get<double>();
    }
    if (doc.contains("coarsen")) {
      const auto& s = doc["coarsen"];
      reject_unknown(s, "coarsen", {"levels"});
      if (s.contains("levels")) c.coarsen.levels = s["levels"].get<int>();
    }
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      reject_unknown(d, "data",
                     {"expression", "orientation", "labels", "mapping", "missing_threshold", "log_transform",
                      "synthetic"});
      c.data.expression = path_field(d, "expression", base_dir);
      c.data.labels = path_field(d, "labels", base_dir);
      c.data.mapping = path_field(d, "mapping", base_dir);
      if (d.contains("orientation")) c.data.orientation = orientation_from_string(d["orientation"].get<std::string>());
      if (d.contains("missing_threshold")) c.data.missing_threshold = d["missing_threshold"].get<double>();
      if (d.contains("log_transform")) c.data.log_transform = d["log_transform"].get<bool>();
      if (d.contains("synthetic") && !d["synthetic"].is_null()) c.data.synthetic = synthetic_from_json(d["synthetic"]);
    }
    if (doc.contains("architecture")) c.architecture = architecture_from_json(doc["architecture"]);
    if (doc.contains("train")) c.train = train_config_from_json(doc["train"]);
    if (doc.contains("explain")) {
      const auto& e = doc["explain"];
      reject_unknown(e, "explain", {"class", "top_k", "reduction", "partition", "threads"});
      if (e.contains("class")) c.explain.target_class = e["class"].get<int>();
      if (e.contains("top_k")) c.explain.top_k = e["top_k"].get<std::size_t>();
      if (e.contains("reduction")) c.explain.reduction = reduction_from_string(e["reduction"].get<std::string>());
      if (e.contains("partition")) c.explain.partition = e["partition"].get<std::string>();
      if (e.contains("threads")) c.explain.threads = e["threads"].get<unsigned>();
    }
    if (doc.contains("enrich")) {
      const auto& e = doc["enrich"];
      reject_unknown(e, "enrich", {"gmt", "top_supernodes"});
      c.enrich.gmt = path_field(e, "gmt", base_dir);
      if (e.contains("top_supernodes")) c.enrich.top_supernodes = e["top_supernodes"].get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.train.seed = c.seed;
  if (c.data.synthetic) c.data.synthetic->seed = c.seed;
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  fs::path base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_run_config(text.str(), fs::absolute(base));
}

ojson run_config_to_json(const RunConfig& c) {
  ojson j;
  j["format_version"] = kRunConfigFormat;
  j["seed"] = c.seed;
  j["graph"]["edges"] = path_json(c.graph.edges);
  j["graph"]["min_weight"] = c.graph.min_weight;
  j["graph"]["hierarchy"] = path_json(c.graph.hierarchy);
  j["coarsen"]["levels"] = c.coarsen.levels;
  j["data"]["expression"] = path_json(c.data.expression);
  j["data"]["orientation"] = to_string(c.data.orientation);
  j["data"]["labels"] = path_json(c.data.labels);
  j["data"]["mapping"] = path_json(c.data.mapping);
  j["data"]["missing_threshold"] = c.data.missing_threshold;
  j["data"]["log_transform"] = c.data.log_transform;
  j["data"]["synthetic"] = c.data.synthetic ? synthetic_to_json(*c.data.synthetic) : ojson(nullptr);
  j["architecture"] = architecture_to_json(c.architecture);
  j["train"] = train_config_to_json(c.train);
  j["explain"]["class"] = c.explain.target_class;
  j["explain"]["top_k"] = c.explain.top_k;
  j["explain"]["reduction"] = to_string(c.explain.reduction);
  j["explain"]["partition"] = c.explain.partition;
  j["explain"]["threads"] = c.explain.threads;
  j["enrich"]["gmt"] = path_json(c.enrich.gmt);
  j["enrich"]["top_supernodes"] = c.enrich.top_supernodes;
  return j;
}

}  // namespace hgp::cli
