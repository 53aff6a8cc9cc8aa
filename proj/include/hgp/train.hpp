#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "hgp/autodiff.hpp"
#include "hgp/dataio.hpp"
#include "hgp/gnn.hpp"
#include "hgp/metrics.hpp"

namespace hgp {

enum class ClassWeighting { kNone, kInverseFrequency };

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  int max_epochs = 50;
  int patience = 10;  // epochs without a validation F1-macro improvement
  ClassWeighting class_weighting = ClassWeighting::kNone;
  std::array<double, 3> split{0.70, 0.15, 0.15};
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& c);
// The seed is not part of the JSON section; it comes from the run seed.
TrainConfig train_config_from_json(const nlohmann::ordered_json& doc);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  nlohmann::ordered_json to_json() const;
};

// Per-class largest-remainder allocation; ties in the remainder go to the
// later partition. Each class is shuffled with a seed derived from `seed`
// and the partitions are returned sorted.
Split stratified_split(std::span<const int> labels, std::array<double, 3> fractions, std::uint64_t seed);

// Sigmoid + binary cross-entropy for the binary head, softmax + categorical
// cross-entropy otherwise; mean over the batch of class-weighted NLL.
ad::Var cross_entropy(ad::Var logits, std::span<const int> labels, std::span<const double> class_weights,
                      HeadKind head);

std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t n_classes);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& config) : config_(config) {}
  void step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads);
  int steps() const { return t_; }

 private:
  TrainConfig config_;
  int t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_f1_macro = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  bool stopped_early = false;

  void write_csv(const std::filesystem::path& path) const;
};

// Class decisions in eval mode: argmax, or logit >= 0 (probability >= 0.5)
// for the binary head.
std::vector<int> predict_classes(const GnnModel& model, const Tensor& x);

EvalReport evaluate(const GnnModel& model, const ExpressionDataset& ds, std::span<const std::size_t> partition);

// Mini-batch Adam with seeded shuffling and dropout; restores the parameters
// of the best validation epoch before returning.
TrainHistory fit(GnnModel& model, const ExpressionDataset& ds, const Split& split, const TrainConfig& config);

enum class SweepKind { kConvStart, kLevels };

struct AblationRow {
  int n_levels = 0;
  int conv_start_level = 0;
  std::size_t conv_levels = 0;
  std::size_t param_count = 0;
  int best_epoch = 0;
  double val_f1_macro = 0.0;
  double test_f1_macro = 0.0;
};

// kConvStart: conv_start_level = 0..n_levels with n_levels fixed.
// kLevels: n_levels = 0..base.n_levels with convolutions on every level.
std::vector<AblationRow> ablation_sweep(std::shared_ptr<const CoarseningHierarchy> hierarchy,
                                        const ExpressionDataset& ds, const Split& split,
                                        const ArchitectureConfig& base, const TrainConfig& train, SweepKind kind,
                                        std::uint64_t seed);
void write_ablation_tsv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace hgp
