#include "hgp/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "hgp/error.hpp"
#include "hgp/tsv.hpp"

namespace hgp {

Orientation orientation_from_string(const std::string& text) {
  if (text == "genes-as-rows") return Orientation::kGenesAsRows;
  if (text == "samples-as-rows") return Orientation::kSamplesAsRows;
  throw ConfigError("orientation must be 'genes-as-rows' or 'samples-as-rows', got '" + text + "'");
}

std::string to_string(Orientation o) {
  return o == Orientation::kGenesAsRows ? "genes-as-rows" : "samples-as-rows";
}

std::size_t ExpressionDataset::missing_count() const {
  return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

Tensor ExpressionDataset::rows(std::span<const std::size_t> indices) const {
  const std::size_t g = n_genes();
  Tensor out({indices.size(), g});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n_samples()) throw IndexError("sample index out of range");
    std::copy_n(values.values().begin() + static_cast<std::ptrdiff_t>(indices[k] * g), g,
                out.values().begin() + static_cast<std::ptrdiff_t>(k * g));
  }
  return out;
}

std::vector<int> ExpressionDataset::labels_of(std::span<const std::size_t> indices) const {
  if (!labeled()) throw ContractError("dataset has no labels");
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

namespace {

bool is_missing_token(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan";
}

void check_unique(const std::vector<std::string>& ids, const std::string& what, const std::string& source) {
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw ParseError(source + ": duplicate " + what + " id '" + id + "'");
  }
}

}  // namespace

ExpressionDataset load_expression(const std::filesystem::path& path, Orientation orientation,
                                  const std::optional<std::filesystem::path>& labels_path) {
  const auto lines = tsv::read_lines(path);
  const std::string source = path.string();
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  if (first == lines.size()) throw ParseError(source + ": empty expression file");
  const auto header = tsv::split(lines[first]);
  if (header.size() < 2) throw ParseError(source, first + 1, "header needs a corner cell and at least one id");
  std::vector<std::string> column_ids(header.begin() + 1, header.end());

  std::vector<std::string> row_ids;
  std::vector<double> cells;
  std::vector<std::uint8_t> cell_missing;
  for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto fields = tsv::split(lines[ln]);
    if (fields.size() != header.size()) {
      throw ParseError(source, ln + 1,
                       "expected " + std::to_string(header.size()) + " columns, found " + std::to_string(fields.size()));
    }
    row_ids.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      if (is_missing_token(fields[c])) {
        cells.push_back(0.0);
        cell_missing.push_back(1);
        continue;
      }
      const auto v = tsv::parse_double(fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(source, ln + 1, "non-numeric cell '" + fields[c] + "' in column '" + column_ids[c - 1] + "'");
      }
      cells.push_back(*v);
      cell_missing.push_back(0);
    }
  }

  ExpressionDataset ds;
  const std::size_t n_rows = row_ids.size();
  const std::size_t n_cols = column_ids.size();
  if (orientation == Orientation::kSamplesAsRows) {
    ds.sample_ids = std::move(row_ids);
    ds.gene_ids = std::move(column_ids);
    ds.values = Tensor({n_rows, n_cols}, std::move(cells));
    ds.missing = std::move(cell_missing);
  } else {
    ds.gene_ids = std::move(row_ids);
    ds.sample_ids = std::move(column_ids);
    ds.values = Tensor({n_cols, n_rows});
    ds.missing.assign(n_rows * n_cols, 0);
    for (std::size_t r = 0; r < n_rows; ++r) {
      for (std::size_t c = 0; c < n_cols; ++c) {
        ds.values.at(c, r) = cells[r * n_cols + c];
        ds.missing[c * n_rows + r] = cell_missing[r * n_cols + c];
      }
    }
  }
  check_unique(ds.sample_ids, "sample", source);
  check_unique(ds.gene_ids, "gene", source);
  if (labels_path) attach_labels(ds, load_labels(*labels_path));
  return ds;
}

std::vector<std::pair<std::string, std::string>> load_labels(const std::filesystem::path& path) {
  const auto lines = tsv::read_lines(path);
  const std::string source = path.string();
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  bool first = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto fields = tsv::split(lines[ln]);
    if (fields.size() != 2) throw ParseError(source, ln + 1, "expected sample_id<TAB>label");
    if (first && fields[0] == "sample_id" && fields[1] == "label") {
      first = false;
      continue;
    }
    first = false;
    if (fields[0].empty() || fields[1].empty()) throw ParseError(source, ln + 1, "empty sample id or label");
    if (!seen.insert(fields[0]).second) throw ParseError(source, ln + 1, "duplicate sample '" + fields[0] + "'");
    out.emplace_back(fields[0], fields[1]);
  }
  return out;
}

void attach_labels(ExpressionDataset& ds, const std::vector<std::pair<std::string, std::string>>& labels) {
  std::unordered_map<std::string, std::string> by_sample(labels.begin(), labels.end());
  std::set<std::string> names;
  for (const auto& sample : ds.sample_ids) {
    auto it = by_sample.find(sample);
    if (it == by_sample.end()) throw ParseError("sample '" + sample + "' has no label");
    names.insert(it->second);
  }
  ds.label_names.assign(names.begin(), names.end());
  ds.labels.clear();
  for (const auto& sample : ds.sample_ids) {
    const auto& name = by_sample.at(sample);
    ds.labels.push_back(static_cast<int>(std::lower_bound(ds.label_names.begin(), ds.label_names.end(), name) -
                                         ds.label_names.begin()));
  }
}

namespace {

ExpressionDataset select(const ExpressionDataset& ds, const std::vector<std::size_t>& samples,
                         const std::vector<std::size_t>& genes) {
  ExpressionDataset out;
  out.label_names = ds.label_names;
  for (std::size_t s : samples) {
    out.sample_ids.push_back(ds.sample_ids[s]);
    if (ds.labeled()) out.labels.push_back(ds.labels[s]);
  }
  for (std::size_t g : genes) out.gene_ids.push_back(ds.gene_ids[g]);
  out.values = Tensor({samples.size(), genes.size()});
  out.missing.assign(samples.size() * genes.size(), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < genes.size(); ++j) {
      out.values.at(i, j) = ds.values.at(samples[i], genes[j]);
      out.missing[i * genes.size() + j] = ds.missing[samples[i] * ds.n_genes() + genes[j]];
    }
  }
  return out;
}

}  // namespace

ExpressionDataset filter_missing(const ExpressionDataset& ds, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("missing threshold must be in [0, 1]");
  const std::size_t ns = ds.n_samples();
  const std::size_t ng = ds.n_genes();
  if (ns == 0 || ng == 0) throw EmptyDatasetError("dataset is empty");

  std::vector<std::size_t> all_samples(ns);
  for (std::size_t s = 0; s < ns; ++s) all_samples[s] = s;
  std::vector<std::size_t> genes;
  for (std::size_t g = 0; g < ng; ++g) {
    std::size_t miss = 0;
    for (std::size_t s = 0; s < ns; ++s) miss += ds.is_missing(s, g);
    if (static_cast<double>(miss) / static_cast<double>(ns) <= threshold) genes.push_back(g);
  }
  if (genes.empty()) throw EmptyDatasetError("every gene exceeded the missing-value threshold");
  std::vector<std::size_t> samples;
  for (std::size_t s = 0; s < ns; ++s) {
    std::size_t miss = 0;
    for (std::size_t g : genes) miss += ds.is_missing(s, g);
    if (static_cast<double>(miss) / static_cast<double>(genes.size()) <= threshold) samples.push_back(s);
  }
  if (samples.empty()) throw EmptyDatasetError("every sample exceeded the missing-value threshold");

  ExpressionDataset out = select(ds, samples, genes);
  std::vector<double> observed;
  for (std::size_t g = 0; g < out.n_genes(); ++g) {
    observed.clear();
    bool any_missing = false;
    for (std::size_t s = 0; s < out.n_samples(); ++s) {
      if (out.is_missing(s, g)) {
        any_missing = true;
      } else {
        observed.push_back(out.values.at(s, g));
      }
    }
    if (!any_missing) continue;
    double median = 0.0;
    if (!observed.empty()) {
      std::sort(observed.begin(), observed.end());
      const std::size_t m = observed.size();
      median = m % 2 ? observed[m / 2] : 0.5 * (observed[m / 2 - 1] + observed[m / 2]);
    }
    for (std::size_t s = 0; s < out.n_samples(); ++s) {
      if (out.is_missing(s, g)) {
        out.values.at(s, g) = median;
        out.missing[s * out.n_genes() + g] = 0;
      }
    }
  }
  return out;
}

ExpressionDataset log_transform(const ExpressionDataset& ds) {
  ExpressionDataset out = ds;
  for (std::size_t s = 0; s < ds.n_samples(); ++s) {
    for (std::size_t g = 0; g < ds.n_genes(); ++g) {
      if (ds.is_missing(s, g)) continue;
      const double v = ds.values.at(s, g);
      if (v < 0.0) {
        throw DomainError("negative value " + tsv::format_double(v) + " at sample '" + ds.sample_ids[s] +
                          "', gene '" + ds.gene_ids[g] + "'");
      }
      out.values.at(s, g) = std::log2(v + 1.0);
    }
  }
  return out;
}

nlohmann::ordered_json AlignmentReport::to_json() const {
  nlohmann::ordered_json j;
  j["matched"] = matched;
  j["zero_filled"] = zero_filled;
  j["dropped"] = dropped;
  nlohmann::ordered_json coll = nlohmann::ordered_json::array();
  for (const auto& c : collisions) coll.push_back({{"node_id", c.node_id}, {"kept", c.kept}, {"dropped", c.dropped}});
  j["collisions"] = std::move(coll);
  return j;
}

std::vector<std::pair<std::string, std::string>> load_mapping(const std::filesystem::path& path) {
  const auto lines = tsv::read_lines(path);
  const std::string source = path.string();
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, std::string> seen;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto fields = tsv::split(lines[ln]);
    if (fields.size() != 2) throw ParseError(source, ln + 1, "expected old_id<TAB>node_id");
    auto [it, inserted] = seen.emplace(fields[0], fields[1]);
    if (!inserted) {
      if (it->second == fields[1]) continue;
      throw ParseError(source, ln + 1, "id '" + fields[0] + "' maps to more than one node");
    }
    out.emplace_back(fields[0], fields[1]);
  }
  return out;
}

AlignedDataset align_to_graph(const ExpressionDataset& ds, const GeneGraph& g,
                              const std::vector<std::pair<std::string, std::string>>& mapping) {
  std::unordered_map<std::string, std::string> rename;
  for (const auto& [from, to] : mapping) {
    auto [it, inserted] = rename.emplace(from, to);
    if (!inserted && it->second != to) throw ContractError("mapping for '" + from + "' is not functional");
  }
  const std::size_t ns = ds.n_samples();
  auto column_mean = [&](std::size_t gene) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < ns; ++s) {
      if (ds.is_missing(s, gene)) continue;
      sum += ds.values.at(s, gene);
      ++n;
    }
    return n ? sum / static_cast<double>(n) : -INFINITY;
  };

  AlignedDataset result;
  AlignmentReport& report = result.report;
  // Winning source column per target name.
  std::map<std::string, std::size_t> source_of;
  std::vector<std::string> target_names(ds.n_genes());
  for (std::size_t j = 0; j < ds.n_genes(); ++j) {
    auto it = rename.find(ds.gene_ids[j]);
    target_names[j] = it == rename.end() ? ds.gene_ids[j] : it->second;
    auto [pos, inserted] = source_of.emplace(target_names[j], j);
    if (inserted) continue;
    const std::size_t incumbent = pos->second;
    if (column_mean(j) > column_mean(incumbent)) {
      report.collisions.push_back({target_names[j], ds.gene_ids[j], ds.gene_ids[incumbent]});
      pos->second = j;
    } else {
      report.collisions.push_back({target_names[j], ds.gene_ids[incumbent], ds.gene_ids[j]});
    }
  }
  for (std::size_t j = 0; j < ds.n_genes(); ++j) {
    if (!g.find(target_names[j])) report.dropped.push_back(ds.gene_ids[j]);
  }

  ExpressionDataset& out = result.dataset;
  out.sample_ids = ds.sample_ids;
  out.labels = ds.labels;
  out.label_names = ds.label_names;
  out.gene_ids = g.node_ids();
  const std::size_t n = g.n_nodes();
  out.values = Tensor({ns, n}, 0.0);
  out.missing.assign(ns * n, 0);
  for (std::size_t node = 0; node < n; ++node) {
    auto it = source_of.find(g.id(node));
    if (it == source_of.end()) {
      report.zero_filled.push_back(g.id(node));
      continue;
    }
    ++report.matched;
    for (std::size_t s = 0; s < ns; ++s) {
      out.values.at(s, node) = ds.values.at(s, it->second);
      out.missing[s * n + node] = ds.missing[s * ds.n_genes() + it->second];
    }
  }
  if (report.matched == 0) throw AlignmentError("no dataset gene matches a graph node");
  return result;
}

void write_expression_tsv(const ExpressionDataset& ds, const std::filesystem::path& path, Orientation orientation) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  auto cell = [&](std::size_t s, std::size_t g) {
    return ds.is_missing(s, g) ? std::string("NA") : tsv::format_double(ds.values.at(s, g));
  };
  if (orientation == Orientation::kSamplesAsRows) {
    out << "sample_id";
    for (const auto& g : ds.gene_ids) out << '\t' << g;
    out << '\n';
    for (std::size_t s = 0; s < ds.n_samples(); ++s) {
      out << ds.sample_ids[s];
      for (std::size_t g = 0; g < ds.n_genes(); ++g) out << '\t' << cell(s, g);
      out << '\n';
    }
  } else {
    out << "gene_id";
    for (const auto& s : ds.sample_ids) out << '\t' << s;
    out << '\n';
    for (std::size_t g = 0; g < ds.n_genes(); ++g) {
      out << ds.gene_ids[g];
      for (std::size_t s = 0; s < ds.n_samples(); ++s) out << '\t' << cell(s, g);
      out << '\n';
    }
  }
}

void write_labels_tsv(const ExpressionDataset& ds, const std::filesystem::path& path) {
  if (!ds.labeled()) throw ContractError("dataset has no labels to write");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id\tlabel\n";
  for (std::size_t s = 0; s < ds.n_samples(); ++s) {
    out << ds.sample_ids[s] << '\t' << ds.label_names[static_cast<std::size_t>(ds.labels[s])] << '\n';
  }
}

}  // namespace hgp
