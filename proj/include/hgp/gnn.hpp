#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hgp/autodiff.hpp"
#include "hgp/coarsen.hpp"
#include "hgp/graph.hpp"
#include "hgp/tensor.hpp"

namespace hgp {

enum class HeadKind { kBinary, kMulticlass };

struct ArchitectureConfig {
  // Number of coarsening blocks; 0 gives the plain MLP baseline.
  int n_levels = 7;
  // Blocks before this level pool without convolving.
  int conv_start_level = 4;
  // Output channels per conv block; empty means 2, 4, 8, ...
  std::vector<std::size_t> channel_schedule;
  std::size_t hidden_units = 256;
  double dropout_p = 0.2;
  HeadKind head = HeadKind::kBinary;
  std::size_t n_classes = 2;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  LambdaMode lambda_mode = LambdaMode::kApproximate;

  std::size_t conv_levels() const;
  std::vector<std::size_t> channels() const;
  // 1 for the sigmoid head, n_classes for softmax.
  std::size_t n_outputs() const;
  void validate(std::size_t hierarchy_depth) const;
};

nlohmann::ordered_json architecture_to_json(const ArchitectureConfig& config);
// Rejects unknown keys; missing keys keep their defaults.
ArchitectureConfig architecture_from_json(const nlohmann::ordered_json& doc);

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Dense baseline: n_genes -> hidden -> n_outputs with batch-norm affine terms.
std::size_t baseline_param_count(std::size_t n_genes, std::size_t hidden, std::size_t n_outputs);

// ChebConv with K = 2: H theta0 + (L~ H) theta1.
ad::Var cheb_conv(ad::Var h, const LaplacianOperator& lap, ad::Var theta0, ad::Var theta1);

// (S^T (w . H)) via cluster-indexed scatter in ascending fine index.
ad::Var weighted_pool(ad::Var h, const AssignmentMap& assignment, ad::Var w);

class GnnModel {
 public:
  struct ForwardOptions {
    bool train = false;
    std::uint64_t dropout_seed = 0;
    bool update_running_stats = false;
  };

  struct Output {
    ad::Var logits;      // {B, n_outputs}
    ad::Var embeddings;  // {B, N_L, F_L}, before flattening
  };

  GnnModel(ArchitectureConfig config, std::shared_ptr<const CoarseningHierarchy> hierarchy, std::uint64_t seed);

  const ArchitectureConfig& config() const { return config_; }
  const CoarseningHierarchy& hierarchy() const { return *hierarchy_; }
  std::shared_ptr<const CoarseningHierarchy> hierarchy_ptr() const { return hierarchy_; }

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;
  std::optional<std::size_t> parameter_index(std::string_view name) const;
  ad::BatchNormState& batchnorm_state() { return bn_state_; }
  const ad::BatchNormState& batchnorm_state() const { return bn_state_; }

  std::size_t param_count() const;
  std::size_t input_size() const { return hierarchy_->size_at(0); }
  std::size_t embedding_nodes() const;
  std::size_t embedding_channels() const;
  std::size_t flat_features() const { return embedding_nodes() * embedding_channels(); }
  const LaplacianOperator& laplacian(std::size_t level) const;

  // Every parameter as a tape leaf, in parameters() order.
  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad) const;

  // x: {B, N_0}. Eval mode never touches the running statistics.
  Output forward(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x, const ForwardOptions& options) const;
  // Train-mode pass that may update the batch-norm running statistics.
  Output forward_train(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x, const ForwardOptions& options);

  // Eval-mode logits, no gradients.
  Tensor predict_logits(const Tensor& x) const;

  nlohmann::ordered_json to_checkpoint_json() const;

 private:
  Output forward_impl(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x, const ForwardOptions& options,
                      ad::BatchNormState& state) const;

  ArchitectureConfig config_;
  std::shared_ptr<const CoarseningHierarchy> hierarchy_;
  std::vector<LaplacianOperator> laplacians_;  // indexed by level; only conv levels are meaningful
  std::vector<NamedTensor> params_;
  ad::BatchNormState bn_state_;
};

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path);
// `force` skips the hierarchy digest check; shape compatibility is always enforced.
GnnModel load_checkpoint(const std::filesystem::path& path, std::shared_ptr<const CoarseningHierarchy> hierarchy,
                         bool force = false);
GnnModel checkpoint_from_json(const std::string& text, std::shared_ptr<const CoarseningHierarchy> hierarchy,
                              bool force = false);

}  // namespace hgp
