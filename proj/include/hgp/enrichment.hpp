#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hgp {

struct GeneSet {
  std::string id;
  std::string description;
  std::vector<std::string> genes;
};

using GeneSetCollection = std::vector<GeneSet>;

// GMT: set_id<TAB>description<TAB>gene... per line. Duplicate genes within a
// set are collapsed; a duplicate set id is a ParseError.
GeneSetCollection load_gmt(const std::filesystem::path& path);

struct OraResult {
  std::string set_id;
  std::string description;
  std::size_t overlap = 0;      // k
  std::size_t cluster_size = 0; // n
  std::size_t set_size = 0;     // K, after intersecting with the universe
  std::size_t universe_size = 0;// N
  double enrichment_ratio = 0.0;
  double p_value = 1.0;
  double fdr = 1.0;
  std::vector<std::string> overlap_genes;
};

// P(X >= k) for X ~ Hypergeometric(N, K, n), summed in log space.
double hypergeometric_upper_tail(std::size_t k, std::size_t N, std::size_t K, std::size_t n);

// Benjamini-Hochberg step-up adjustment, returned in input order.
std::vector<double> bh_fdr(std::span<const double> p_values);

// Sets with no members in the universe are not tested. Results are sorted by
// FDR, then p-value, then set id.
std::vector<OraResult> ora(std::span<const std::string> cluster, const GeneSetCollection& sets,
                           std::span<const std::string> universe);

// set_id<TAB>description<TAB>enrichment_ratio<TAB>p_value<TAB>fdr plus the
// overlap counts.
void write_ora_tsv(const std::vector<OraResult>& results, const std::filesystem::path& path);

}  // namespace hgp
