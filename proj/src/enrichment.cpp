#include "hgp/enrichment.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include "hgp/error.hpp"
#include "hgp/tsv.hpp"

namespace hgp {

GeneSetCollection load_gmt(const std::filesystem::path& path) {
  const auto lines = tsv::read_lines(path);
  GeneSetCollection out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i] == "\r") continue;
    const auto fields = tsv::split(lines[i]);
    if (fields.size() < 2 || fields[0].empty()) {
      throw ParseError(path.string(), i + 1, "expected set_id<TAB>description<TAB>genes...");
    }
    if (!seen.insert(fields[0]).second) {
      throw ParseError(path.string(), i + 1, "duplicate gene set '" + fields[0] + "'");
    }
    GeneSet set{fields[0], fields[1], {}};
    std::unordered_set<std::string> members;
    for (std::size_t f = 2; f < fields.size(); ++f) {
      if (!fields[f].empty() && members.insert(fields[f]).second) set.genes.push_back(fields[f]);
    }
    out.push_back(std::move(set));
  }
  return out;
}

double hypergeometric_upper_tail(std::size_t k, std::size_t N, std::size_t K, std::size_t n) {
  if (K > N || n > N) throw ContractError("hypergeometric: K and n must not exceed N");
  const std::size_t lo = (n + K > N) ? n + K - N : 0;
  const std::size_t hi = std::min(n, K);
  if (k <= lo) return 1.0;
  if (k > hi) return 0.0;
  auto lf = [](std::size_t x) { return std::lgamma(static_cast<double>(x) + 1.0); };
  auto log_choose = [&](std::size_t a, std::size_t b) { return lf(a) - lf(b) - lf(a - b); };
  const double log_total = log_choose(N, n);
  std::vector<double> terms;
  terms.reserve(hi - k + 1);
  for (std::size_t i = k; i <= hi; ++i) {
    terms.push_back(log_choose(K, i) + log_choose(N - K, n - i) - log_total);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - top);
  const double p = std::exp(top) * sum;
  return std::clamp(p, DBL_MIN, 1.0);
}

std::vector<double> bh_fdr(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p > 0.0 && p <= 1.0)) throw ContractError("bh_fdr: p-values must lie in (0, 1]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t i = order[r];
    // m / rank >= 1 exactly, so the adjusted value never rounds below p.
    const double adjusted = (static_cast<double>(m) / static_cast<double>(r + 1)) * p_values[i];
    running = std::min(running, adjusted);
    out[i] = std::min(running, 1.0);
  }
  return out;
}

std::vector<OraResult> ora(std::span<const std::string> cluster, const GeneSetCollection& sets,
                           std::span<const std::string> universe) {
  const std::unordered_set<std::string> uni(universe.begin(), universe.end());
  if (uni.empty()) throw ContractError("ora: empty universe");
  std::vector<std::string> offenders;
  std::unordered_set<std::string> members;
  std::vector<std::string> cluster_genes;
  for (const auto& g : cluster) {
    if (!uni.count(g)) {
      offenders.push_back(g);
    } else if (members.insert(g).second) {
      cluster_genes.push_back(g);
    }
  }
  if (!offenders.empty()) {
    std::string msg = "ora: cluster genes outside the universe:";
    for (const auto& g : offenders) msg += " " + g;
    throw ContractError(msg);
  }
  const std::size_t N = uni.size();
  const std::size_t n = cluster_genes.size();
  std::vector<OraResult> results;
  for (const auto& set : sets) {
    std::size_t K = 0;
    OraResult r;
    for (const auto& g : set.genes) {
      if (!uni.count(g)) continue;
      ++K;
      if (members.count(g)) r.overlap_genes.push_back(g);
    }
    if (K == 0) continue;
    r.set_id = set.id;
    r.description = set.description;
    r.overlap = r.overlap_genes.size();
    r.cluster_size = n;
    r.set_size = K;
    r.universe_size = N;
    r.enrichment_ratio = n == 0 ? 0.0
                                : (static_cast<double>(r.overlap) / static_cast<double>(n)) /
                                      (static_cast<double>(K) / static_cast<double>(N));
    r.p_value = hypergeometric_upper_tail(r.overlap, N, K, n);
    results.push_back(std::move(r));
  }
  std::vector<double> p(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) p[i] = results[i].p_value;
  const auto fdr = bh_fdr(p);
  for (std::size_t i = 0; i < results.size(); ++i) results[i].fdr = fdr[i];
  std::stable_sort(results.begin(), results.end(), [](const OraResult& a, const OraResult& b) {
    if (a.fdr != b.fdr) return a.fdr < b.fdr;
    if (a.p_value != b.p_value) return a.p_value < b.p_value;
    return a.set_id < b.set_id;
  });
  return results;
}

void write_ora_tsv(const std::vector<OraResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "set_id\tdescription\tenrichment_ratio\tp_value\tfdr\toverlap\tcluster_size\tset_size\tuniverse_size\n";
  for (const auto& r : results) {
    out << r.set_id << '\t' << r.description << '\t' << tsv::format_double(r.enrichment_ratio) << '\t'
        << tsv::format_double(r.p_value) << '\t' << tsv::format_double(r.fdr) << '\t' << r.overlap << '\t'
        << r.cluster_size << '\t' << r.set_size << '\t' << r.universe_size << '\n';
  }
}

}  // namespace hgp
