#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hgp/autodiff.hpp"
#include "hgp/gnn.hpp"
#include "hgp/tensor.hpp"

namespace hgp {

enum class SaliencyLevel { kInput, kSupernode };
enum class SupernodeReduction { kMean, kMax };

SupernodeReduction reduction_from_string(const std::string& text);
std::string to_string(SupernodeReduction r);

struct SaliencyReport {
  SaliencyLevel level = SaliencyLevel::kInput;
  int target_class = 0;
  std::vector<std::string> sample_ids;
  std::vector<std::string> feature_ids;
  Tensor raw;         // {samples, features}, absolute gradients
  Tensor normalized;  // per-row z-scores; rows flagged in zero_variance stay 0
  std::vector<bool> zero_variance;

  std::size_t n_samples() const { return sample_ids.size(); }
  std::size_t n_features() const { return feature_ids.size(); }

  // sample_id,feature_id,raw,normalized; flagged rows leave normalized empty.
  void write_csv(const std::filesystem::path& path) const;
};

// Fills `normalized` and `zero_variance` from `raw` (population std).
void normalize_rows(SaliencyReport& report);

// Scalar class score for one sample: x is {1, F}.
using ScoreFunction = std::function<ad::Var(ad::Tape&, ad::Var x)>;

// |d score / d x| per row of `x`, one backward pass per sample. Passes run on
// up to `threads` workers and are merged in sample order.
Tensor score_gradients(const ScoreFunction& score, const Tensor& x, unsigned threads = 0);

// Class score of the model: the pre-activation logit of class c. With the
// single-logit binary head, class 1 scores the logit and class 0 its negation.
ad::Var class_score(ad::Var logits, int target_class, HeadKind head);

SaliencyReport input_saliency(const GnnModel& model, const Tensor& x, std::span<const std::string> sample_ids,
                              int target_class, unsigned threads = 0);

struct SupernodeSaliency {
  Tensor raw;  // {samples, N_L, F_L}
  SaliencyReport reduced;
};

SupernodeSaliency supernode_saliency(const GnnModel& model, const Tensor& x, std::span<const std::string> sample_ids,
                                     int target_class, SupernodeReduction reduction = SupernodeReduction::kMean,
                                     unsigned threads = 0);

struct RankedFeature {
  std::size_t feature = 0;
  std::string feature_id;
  double mean_saliency = 0.0;
};

// Descending mean raw saliency over `group` (all samples when empty); ties
// go to the lexicographically smaller feature id.
std::vector<RankedFeature> rank_features(const SaliencyReport& report, std::span<const std::size_t> group = {});

// rank<TAB>feature_id<TAB>mean_saliency, ranks from 1; top_k == 0 writes all.
void write_ranking_tsv(const std::vector<RankedFeature>& ranking, const std::filesystem::path& path,
                       std::size_t top_k = 0);

}  // namespace hgp
