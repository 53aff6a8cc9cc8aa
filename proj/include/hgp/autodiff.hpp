#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "hgp/graph.hpp"
#include "hgp/rng.hpp"
#include "hgp/tensor.hpp"

// Tape-based reverse-mode differentiation over the handful of primitives the
// hierarchical model needs. A Tape records every operation as it executes;
// backward() walks the records in reverse and accumulates adjoints. Tapes are
// single-use and confined to one thread.
namespace hgp::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kSparseApply,
  kMul,
  kAdd,
  kAddBias,
  kScale,
  kRelu,
  kSigmoid,
  kSoftmax,
  kLog,
  kReduceSum,
  kReduceMean,
  kConcatRows,
  kScatterPool,
  kDropout,
  kBatchNorm,
  kReshape,
  kSoftmaxCrossEntropy,
  kSigmoidCrossEntropy,
};

std::string_view op_name(OpKind kind);

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Adjoints produced by one backward pass. Every node that depends on a
// requires_grad leaf has an entry; requires_grad leaves always do.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  bool has(Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> adjoints_;
};

// Receives the output adjoint and writes (accumulates) into input adjoints.
// An input slot is nullptr when that input needs no gradient.
using BackwardFn = std::function<void(const Tensor& out_grad, std::span<Tensor* const> input_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  const Tensor& value(Var v) const;
  OpKind kind(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Reverse sweep from a scalar. Throws ContractError for a non-scalar loss,
  // TapeError for a foreign Var or a second call.
  Gradients backward(Var loss);

  // Sign pattern of every relu input recorded so far; two evaluations with
  // equal signatures took the same piecewise-linear branch.
  const std::vector<std::uint8_t>& kink_signature() const { return kinks_; }

  // Used by primitives.
  Var record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);
  void check_owned(Var v) const;
  void note_kinks(std::span<const double> relu_input);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> kinks_;
  bool consumed_ = false;
};

// --- primitives -----------------------------------------------------------

// a: {R, K} or {B, R, K}; b: {K, M}. Leading axes of `a` are treated as rows.
Var matmul(Var a, Var b);
// y = L~ x on the node axis; x is {N, F} or {B, N, F}. `lap` must outlive the tape.
Var sparse_apply(Var x, const LaplacianOperator& lap);
Var elementwise_mul(Var a, Var b);
Var add(Var a, Var b);
// x: {..., F}; bias: {F}, added to every row.
Var add_bias(Var x, Var bias);
Var scale(Var x, double alpha);
// Gradient at exactly 0 is 0.
Var relu(Var x);
Var sigmoid(Var x);
// Row-wise over the last axis.
Var softmax(Var x);
Var log(Var x);
Var reduce_sum(Var x);
Var reduce_mean(Var x);
// Concatenates rank-2 tensors with equal column counts along axis 0.
Var concat_rows(std::span<const Var> parts);
Var reshape(Var x, Shape shape);

// Cluster-indexed sum over the node axis: out[c] = sum_{i: cluster_of[i]=c} w_i x[i],
// accumulated in ascending i. x is {N, F} or {B, N, F}; weights (optional, {N})
// may be an invalid Var for an unweighted sum. `cluster_of` must outlive the tape.
Var scatter_pool(Var x, std::span<const std::size_t> cluster_of, std::size_t n_clusters, Var weights = {});

// Multiplies by a fixed mask (entries 0 or 1/(1-p)).
Var dropout(Var x, const Tensor& mask);
// Inverted-dropout mask, Bernoulli(1-p) survivors scaled by 1/(1-p).
Tensor dropout_mask(const Shape& shape, double p, Rng& rng);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

struct BatchNormOptions {
  bool train = true;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool update_running_stats = true;
};

// x: {B, F}. Train mode normalizes with the batch mean and biased variance
// and (optionally) updates running statistics with the unbiased variance;
// eval mode uses the running statistics.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, const BatchNormOptions& options);

// Mean over the batch of class-weighted negative log-likelihood, computed
// with log-sum-exp. logits {B, C}; `class_weights` empty means all ones.
Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights = {});
// Binary variant on logits {B, 1} or {B}; labels in {0, 1}.
Var sigmoid_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights = {});

// --- gradient checking ----------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::vector<std::size_t> skipped;  // coordinates whose +-eps probes crossed a relu kink
};

using ScalarFunction = std::function<Var(Tape&, Var)>;

// Compares the tape gradient of f at x with central differences. Relative
// error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-6);

}  // namespace hgp::ad
