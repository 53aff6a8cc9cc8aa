#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hgp/graph.hpp"
#include "hgp/tensor.hpp"

namespace hgp {

enum class Orientation { kGenesAsRows, kSamplesAsRows };

Orientation orientation_from_string(const std::string& text);
std::string to_string(Orientation o);

// Samples x genes expression matrix with a missing mask and optional labels.
struct ExpressionDataset {
  std::vector<std::string> sample_ids;
  std::vector<std::string> gene_ids;
  Tensor values;                      // {n_samples, n_genes}
  std::vector<std::uint8_t> missing;  // row-major like values, 1 = missing
  std::vector<int> labels;            // empty when unlabeled
  std::vector<std::string> label_names;

  std::size_t n_samples() const { return sample_ids.size(); }
  std::size_t n_genes() const { return gene_ids.size(); }
  bool is_missing(std::size_t s, std::size_t g) const { return missing[s * n_genes() + g] != 0; }
  std::size_t missing_count() const;
  bool labeled() const { return !labels.empty(); }

  // Rows for the given sample indices, {indices.size(), n_genes}.
  Tensor rows(std::span<const std::size_t> indices) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
};

// Reads a TSV whose header row holds ids (first cell is a corner label).
// Empty cells and NA/NaN mark missing values. Labels, when given, come from a
// two-column `sample_id<TAB>label` file (optional `sample_id<TAB>label`
// header); class indices follow the sorted label names.
ExpressionDataset load_expression(const std::filesystem::path& path, Orientation orientation,
                                  const std::optional<std::filesystem::path>& labels_path = std::nullopt);

std::vector<std::pair<std::string, std::string>> load_labels(const std::filesystem::path& path);
void attach_labels(ExpressionDataset& ds, const std::vector<std::pair<std::string, std::string>>& labels);

// Drops genes, then samples, whose missing fraction exceeds `threshold`, and
// imputes what is left with the per-gene median of observed values.
ExpressionDataset filter_missing(const ExpressionDataset& ds, double threshold = 0.20);

// x -> log2(x + 1). Missing cells are left untouched.
ExpressionDataset log_transform(const ExpressionDataset& ds);

struct MappingCollision {
  std::string node_id;
  std::string kept;
  std::string dropped;
};

struct AlignmentReport {
  std::vector<std::string> zero_filled;  // graph nodes absent from the data
  std::vector<std::string> dropped;      // data genes absent from the graph
  std::vector<MappingCollision> collisions;
  std::size_t matched = 0;

  nlohmann::ordered_json to_json() const;
};

struct AlignedDataset {
  ExpressionDataset dataset;
  AlignmentReport report;
};

// Functional old_id -> node_id map; an old id mapped twice is a ParseError.
std::vector<std::pair<std::string, std::string>> load_mapping(const std::filesystem::path& path);

// Renames genes through `mapping` (unmapped genes keep their id), resolves
// many-to-one collisions by higher mean expression, and reorders columns to
// the graph node order, zero-filling nodes without data.
AlignedDataset align_to_graph(const ExpressionDataset& ds, const GeneGraph& g,
                              const std::vector<std::pair<std::string, std::string>>& mapping = {});

void write_expression_tsv(const ExpressionDataset& ds, const std::filesystem::path& path, Orientation orientation);
void write_labels_tsv(const ExpressionDataset& ds, const std::filesystem::path& path);

}  // namespace hgp
