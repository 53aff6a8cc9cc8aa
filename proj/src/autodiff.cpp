#include "hgp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hgp/error.hpp"

namespace hgp::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kSparseApply: return "sparse_apply";
    case OpKind::kMul: return "elementwise_mul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kReduceMean: return "reduce_mean";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kScatterPool: return "scatter_pool";
    case OpKind::kDropout: return "dropout";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kSigmoidCrossEntropy: return "sigmoid_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("use of an unbound Var");
  return tape_->value(*this);
}

const Tensor& Gradients::operator[](Var v) const {
  if (v.tape() != tape_) throw TapeError("gradient lookup for a Var from another tape");
  if (v.id() >= adjoints_.size() || adjoints_[v.id()].storage().empty()) {
    throw TapeError("no gradient recorded for this Var");
  }
  return adjoints_[v.id()];
}

bool Gradients::has(Var v) const {
  return v.tape() == tape_ && v.id() < adjoints_.size() && !adjoints_[v.id()].storage().empty();
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back({OpKind::kLeaf, std::move(value), {}, nullptr, requires_grad});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw TapeError("Var does not belong to this tape");
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

OpKind Tape::kind(Var v) const {
  check_owned(v);
  return nodes_[v.id()].kind;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

void Tape::note_kinks(std::span<const double> relu_input) {
  kinks_.reserve(kinks_.size() + relu_input.size());
  for (double v : relu_input) kinks_.push_back(v > 0.0 ? 1 : 0);
}

Var Tape::record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError("cannot record on a tape after backward");
  if (!value.all_finite()) {
    throw NumericError("non-finite output in " + std::string(op_name(kind)));
  }
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  bool needs_grad = false;
  for (Var in : inputs) {
    check_owned(in);
    ids.push_back(in.id());
    needs_grad = needs_grad || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back({kind, std::move(value), std::move(ids), std::move(backward), needs_grad});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) {
  if (loss.tape() != this || loss.id() >= nodes_.size()) throw TapeError("loss was not recorded on this tape");
  if (consumed_) throw TapeError("backward already ran on this tape");
  if (nodes_[loss.id()].value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(nodes_[loss.id()].value.shape()));
  }
  consumed_ = true;

  Gradients grads;
  grads.tape_ = this;
  grads.adjoints_.resize(nodes_.size());
  auto& adj = grads.adjoints_;
  adj[loss.id()] = Tensor(nodes_[loss.id()].value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.requires_grad || !node.backward || adj[k].storage().empty()) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t s = 0; s < node.inputs.size(); ++s) {
      const std::size_t in = node.inputs[s];
      if (!nodes_[in].requires_grad) continue;
      if (adj[in].storage().empty()) adj[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[s] = &adj[in];
    }
    node.backward(adj[k], slots);
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (nodes_[k].kind == OpKind::kLeaf && nodes_[k].requires_grad && adj[k].storage().empty()) {
      adj[k] = Tensor(nodes_[k].value.shape(), 0.0);
    }
  }
  return grads;
}

namespace {

Tape& tape_of(Var a) {
  if (!a.tape()) throw TapeError("use of an unbound Var");
  return *a.tape();
}

Tape& same_tape(Var a, Var b) {
  Tape& t = tape_of(a);
  t.check_owned(b);
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// Number of rows when every axis but the last is folded into rows.
std::size_t folded_rows(const Tensor& t) { return t.rank() == 0 ? 1 : t.size() / t.shape().back(); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() < 2 || A.rank() > 3 || B.rank() != 2 || A.shape().back() != B.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  const std::size_t rows = folded_rows(A);
  const std::size_t inner = B.dim(0);
  const std::size_t cols = B.dim(1);
  Shape out_shape = A.shape();
  out_shape.back() = cols;
  Tensor out(out_shape, 0.0);
  const double* pa = A.values().data();
  const double* pb = B.values().data();
  double* po = out.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = pa[r * inner + k];
      if (av == 0.0) continue;
      const double* brow = pb + k * cols;
      double* orow = po + r * cols;
      for (std::size_t c = 0; c < cols; ++c) orow[c] += av * brow[c];
    }
  }
  return t.record(OpKind::kMatmul, std::move(out), {a, b},
                  [a, b, rows, inner, cols](const Tensor& g, std::span<Tensor* const> in) {
                    const double* pa = a.value().values().data();
                    const double* pb = b.value().values().data();
                    const double* pg = g.values().data();
                    if (in[0]) {
                      double* da = in[0]->values().data();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t k = 0; k < inner; ++k) {
                          double s = 0.0;
                          const double* brow = pb + k * cols;
                          const double* grow = pg + r * cols;
                          for (std::size_t c = 0; c < cols; ++c) s += grow[c] * brow[c];
                          da[r * inner + k] += s;
                        }
                      }
                    }
                    if (in[1]) {
                      double* db = in[1]->values().data();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t k = 0; k < inner; ++k) {
                          const double av = pa[r * inner + k];
                          if (av == 0.0) continue;
                          const double* grow = pg + r * cols;
                          double* dbrow = db + k * cols;
                          for (std::size_t c = 0; c < cols; ++c) dbrow[c] += av * grow[c];
                        }
                      }
                    }
                  });
}

Var sparse_apply(Var x, const LaplacianOperator& lap) {
  Tape& t = tape_of(x);
  Tensor out = lap.apply(x.value());
  const LaplacianOperator* op = &lap;
  return t.record(OpKind::kSparseApply, std::move(out), {x},
                  [op](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    // L~ is symmetric, so the adjoint is the same operator.
                    const Tensor back = op->apply(g);
                    auto dx = in[0]->values();
                    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += back[k];
                  });
}

Var elementwise_mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "elementwise_mul");
  Tensor out(a.value().shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.value()[k] * b.value()[k];
  return t.record(OpKind::kMul, std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (in[0]) {
      for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k] * bv[k];
    }
    if (in[1]) {
      for (std::size_t k = 0; k < g.size(); ++k) (*in[1])[k] += g[k] * av[k];
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.value()[k] + b.value()[k];
  return t.record(OpKind::kAdd, std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> in) {
    for (Tensor* slot : in) {
      if (!slot) continue;
      for (std::size_t k = 0; k < g.size(); ++k) (*slot)[k] += g[k];
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (X.rank() == 0 || b.rank() != 1 || b.dim(0) != X.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_string(b.shape()) + " does not match " + shape_string(X.shape()));
  }
  const std::size_t cols = b.dim(0);
  Tensor out = X;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b[k % cols];
  return t.record(OpKind::kAddBias, std::move(out), {x, bias},
                  [cols](const Tensor& g, std::span<Tensor* const> in) {
                    if (in[0]) {
                      for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k];
                    }
                    if (in[1]) {
                      for (std::size_t k = 0; k < g.size(); ++k) (*in[1])[k % cols] += g[k];
                    }
                  });
}

Var scale(Var x, double alpha) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.values()) v *= alpha;
  return t.record(OpKind::kScale, std::move(out), {x}, [alpha](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += alpha * g[k];
  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  t.note_kinks(X.values());
  Tensor out(X.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = X[k] > 0.0 ? X[k] : 0.0;
  return t.record(OpKind::kRelu, std::move(out), {x}, [x](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    const Tensor& X = x.value();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (X[k] > 0.0) (*in[0])[k] += g[k];
    }
  });
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double v = X[k];
    // Branches keep exp() from overflowing.
    out[k] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tensor saved = out;
  return t.record(OpKind::kSigmoid, std::move(out), {x}, [saved](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k] * saved[k] * (1.0 - saved[k]);
  });
}

Var softmax(Var x) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  if (X.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t cols = X.shape().back();
  const std::size_t rows = folded_rows(X);
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.values().data() + r * cols;
    double* yr = out.values().data() + r * cols;
    const double m = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (yr[c] = std::exp(xr[c] - m));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  Tensor saved = out;
  return t.record(OpKind::kSoftmax, std::move(out), {x},
                  [saved, rows, cols](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* yr = saved.values().data() + r * cols;
                      const double* gr = g.values().data() + r * cols;
                      double dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                      double* dr = in[0]->values().data() + r * cols;
                      for (std::size_t c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
                    }
                  });
}

Var log(Var x) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::log(X[k]);
  return t.record(OpKind::kLog, std::move(out), {x}, [x](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    const Tensor& X = x.value();
    for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k] / X[k];
  });
}

Var reduce_sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return t.record(OpKind::kReduceSum, Tensor({}, std::vector<double>{s}), {x},
                  [](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    for (double& v : in[0]->values()) v += g[0];
                  });
}

Var reduce_mean(Var x) {
  Tape& t = tape_of(x);
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("reduce_mean: empty tensor");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return t.record(OpKind::kReduceMean, Tensor({}, std::vector<double>{s / static_cast<double>(n)}), {x},
                  [n](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    const double share = g[0] / static_cast<double>(n);
                    for (double& v : in[0]->values()) v += share;
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  Tape& t = tape_of(parts[0]);
  const Tensor& first = parts[0].value();
  if (first.rank() != 2) throw ShapeError("concat_rows: inputs must be rank 2");
  const std::size_t cols = first.dim(1);
  std::size_t rows = 0;
  std::vector<double> values;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    t.check_owned(p);
    const Tensor& v = p.value();
    if (v.rank() != 2 || v.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(v.shape()) + " vs " +
                       shape_string(first.shape()));
    }
    offsets.push_back(values.size());
    values.insert(values.end(), v.values().begin(), v.values().end());
    rows += v.dim(0);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(OpKind::kConcatRows, Tensor({rows, cols}, std::move(values)), inputs,
                  [offsets](const Tensor& g, std::span<Tensor* const> in) {
                    for (std::size_t p = 0; p < in.size(); ++p) {
                      if (!in[p]) continue;
                      auto dst = in[p]->values();
                      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[offsets[p] + k];
                    }
                  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape: " + shape_string(x.value().shape()) + " -> " + shape_string(shape));
  }
  return t.record(OpKind::kReshape, x.value().reshaped(std::move(shape)), {x},
                  [](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k];
                  });
}

Var scatter_pool(Var x, std::span<const std::size_t> cluster_of, std::size_t n_clusters, Var weights) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  const std::size_t n = cluster_of.size();
  std::size_t batch = 1;
  std::size_t cols = 0;
  if (X.rank() == 2 && X.dim(0) == n) {
    cols = X.dim(1);
  } else if (X.rank() == 3 && X.dim(1) == n) {
    batch = X.dim(0);
    cols = X.dim(2);
  } else {
    throw ShapeError("scatter_pool: input " + shape_string(X.shape()) + " does not have " + std::to_string(n) +
                     " nodes");
  }
  const bool weighted = weights.valid();
  if (weighted) {
    t.check_owned(weights);
    const Tensor& w = weights.value();
    if (w.rank() != 1 || w.dim(0) != n) {
      throw ShapeError("scatter_pool: weights " + shape_string(w.shape()) + " for " + std::to_string(n) + " nodes");
    }
  }
  for (std::size_t c : cluster_of) {
    if (c >= n_clusters) throw IndexError("scatter_pool: cluster index out of range");
  }
  Shape out_shape = X.rank() == 2 ? Shape{n_clusters, cols} : Shape{batch, n_clusters, cols};
  Tensor out(out_shape, 0.0);
  const double* w = weighted ? weights.value().values().data() : nullptr;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = X.values().data() + b * n * cols;
    double* ob = out.values().data() + b * n_clusters * cols;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w ? w[i] : 1.0;
      double* orow = ob + cluster_of[i] * cols;
      const double* xrow = xb + i * cols;
      for (std::size_t f = 0; f < cols; ++f) orow[f] += wi * xrow[f];
    }
  }
  std::vector<Var> inputs{x};
  if (weighted) inputs.push_back(weights);
  return t.record(
      OpKind::kScatterPool, std::move(out), inputs,
      [x, weights, weighted, cluster_of, n_clusters, batch, cols](const Tensor& g, std::span<Tensor* const> in) {
        const std::size_t n = cluster_of.size();
        const double* w = weighted ? weights.value().values().data() : nullptr;
        const double* xv = x.value().values().data();
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gb = g.values().data() + b * n_clusters * cols;
          for (std::size_t i = 0; i < n; ++i) {
            const double* grow = gb + cluster_of[i] * cols;
            if (in[0]) {
              double* dx = in[0]->values().data() + (b * n + i) * cols;
              const double wi = w ? w[i] : 1.0;
              for (std::size_t f = 0; f < cols; ++f) dx[f] += wi * grow[f];
            }
            if (weighted && in[1]) {
              const double* xrow = xv + (b * n + i) * cols;
              double s = 0.0;
              for (std::size_t f = 0; f < cols; ++f) s += xrow[f] * grow[f];
              (*in[1])[i] += s;
            }
          }
        }
      });
}

Tensor dropout_mask(const Shape& shape, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout probability must be in [0, 1)");
  Tensor mask(shape, 0.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask.values()) m = rng.uniform() >= p ? keep_scale : 0.0;
  return mask;
}

Var dropout(Var x, const Tensor& mask) {
  Tape& t = tape_of(x);
  require_same_shape(x.value(), mask, "dropout");
  Tensor out = x.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= mask[k];
  return t.record(OpKind::kDropout, std::move(out), {x}, [mask](const Tensor& g, std::span<Tensor* const> in) {
    if (!in[0]) return;
    for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k] * mask[k];
  });
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, const BatchNormOptions& options) {
  Tape& t = same_tape(x, gamma);
  t.check_owned(beta);
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ShapeError("batchnorm: input must be {B, F}, got " + shape_string(X.shape()));
  const std::size_t batch = X.dim(0);
  const std::size_t feat = X.dim(1);
  const Shape fshape{feat};
  if (gamma.value().shape() != fshape || beta.value().shape() != fshape) {
    throw ShapeError("batchnorm: affine parameters must be {" + std::to_string(feat) + "}");
  }
  if (state.running_mean.shape() != fshape || state.running_var.shape() != fshape) {
    throw ShapeError("batchnorm: running statistics must be {" + std::to_string(feat) + "}");
  }
  if (batch == 0) throw ShapeError("batchnorm: empty batch");
  const double eps = options.epsilon;

  Tensor mean(fshape, 0.0);
  Tensor inv_std(fshape, 0.0);
  if (options.train) {
    Tensor var(fshape, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < feat; ++f) mean[f] += X.at(b, f);
    }
    for (std::size_t f = 0; f < feat; ++f) mean[f] /= static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < feat; ++f) {
        const double d = X.at(b, f) - mean[f];
        var[f] += d * d;
      }
    }
    for (std::size_t f = 0; f < feat; ++f) {
      const double biased = var[f] / static_cast<double>(batch);
      inv_std[f] = 1.0 / std::sqrt(biased + eps);
      if (options.update_running_stats) {
        const double unbiased = batch > 1 ? var[f] / static_cast<double>(batch - 1) : biased;
        state.running_mean[f] = (1.0 - options.momentum) * state.running_mean[f] + options.momentum * mean[f];
        state.running_var[f] = (1.0 - options.momentum) * state.running_var[f] + options.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t f = 0; f < feat; ++f) {
      mean[f] = state.running_mean[f];
      inv_std[f] = 1.0 / std::sqrt(state.running_var[f] + eps);
    }
  }

  Tensor xhat(X.shape());
  Tensor out(X.shape());
  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < feat; ++f) {
      const double h = (X.at(b, f) - mean[f]) * inv_std[f];
      xhat.at(b, f) = h;
      out.at(b, f) = G[f] * h + Bt[f];
    }
  }
  const bool train = options.train;
  return t.record(
      OpKind::kBatchNorm, std::move(out), {x, gamma, beta},
      [xhat, inv_std, gamma, train, batch, feat](const Tensor& g, std::span<Tensor* const> in) {
        const Tensor& G = gamma.value();
        if (in[1]) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < feat; ++f) (*in[1])[f] += g.at(b, f) * xhat.at(b, f);
          }
        }
        if (in[2]) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < feat; ++f) (*in[2])[f] += g.at(b, f);
          }
        }
        if (!in[0]) return;
        Tensor& dx = *in[0];
        if (!train) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < feat; ++f) dx.at(b, f) += g.at(b, f) * G[f] * inv_std[f];
          }
          return;
        }
        const double inv_b = 1.0 / static_cast<double>(batch);
        for (std::size_t f = 0; f < feat; ++f) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            sum_g += g.at(b, f);
            sum_gx += g.at(b, f) * xhat.at(b, f);
          }
          const double k = G[f] * inv_std[f];
          for (std::size_t b = 0; b < batch; ++b) {
            dx.at(b, f) += k * (g.at(b, f) - inv_b * sum_g - xhat.at(b, f) * inv_b * sum_gx);
          }
        }
      });
}

namespace {

std::vector<double> resolve_class_weights(std::span<const double> class_weights, std::size_t n_classes) {
  if (class_weights.empty()) return std::vector<double>(n_classes, 1.0);
  if (class_weights.size() != n_classes) {
    throw ShapeError("class weights: expected " + std::to_string(n_classes) + ", got " +
                     std::to_string(class_weights.size()));
  }
  return {class_weights.begin(), class_weights.end()};
}

}  // namespace

Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  Tape& t = tape_of(logits);
  const Tensor& Z = logits.value();
  if (Z.rank() != 2 || Z.dim(0) != labels.size() || Z.dim(0) == 0) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_string(Z.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = Z.dim(0);
  const std::size_t n_classes = Z.dim(1);
  const auto weights = resolve_class_weights(class_weights, n_classes);
  Tensor probs(Z.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    double m = Z.at(b, 0);
    for (std::size_t c = 1; c < n_classes; ++c) m = std::max(m, Z.at(b, c));
    double z = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) z += (probs.at(b, c) = std::exp(Z.at(b, c) - m));
    for (std::size_t c = 0; c < n_classes; ++c) probs.at(b, c) /= z;
    const double log_sum_exp = m + std::log(z);
    loss += weights[static_cast<std::size_t>(y)] * (log_sum_exp - Z.at(b, static_cast<std::size_t>(y)));
  }
  loss /= static_cast<double>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record(OpKind::kSoftmaxCrossEntropy, Tensor({}, std::vector<double>{loss}), {logits},
                  [probs, ys, weights, batch, n_classes](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    const double s = g[0] / static_cast<double>(batch);
                    for (std::size_t b = 0; b < batch; ++b) {
                      const std::size_t y = static_cast<std::size_t>(ys[b]);
                      const double wy = weights[y] * s;
                      for (std::size_t c = 0; c < n_classes; ++c) {
                        in[0]->at(b, c) += wy * (probs.at(b, c) - (c == y ? 1.0 : 0.0));
                      }
                    }
                  });
}

Var sigmoid_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  Tape& t = tape_of(logits);
  const Tensor& Z = logits.value();
  const bool shape_ok = (Z.rank() == 1 || (Z.rank() == 2 && Z.dim(1) == 1)) && Z.dim(0) == labels.size();
  if (!shape_ok || labels.empty()) {
    throw ShapeError("sigmoid_cross_entropy: logits " + shape_string(Z.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = labels.size();
  const auto weights = resolve_class_weights(class_weights, 2);
  Tensor probs(Z.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y != 0 && y != 1) throw LabelError("binary label " + std::to_string(y) + " is not 0 or 1");
    const double z = Z[b];
    // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z).
    const double softplus_pos = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    const double nll = y == 1 ? softplus_pos - z : softplus_pos;
    loss += weights[static_cast<std::size_t>(y)] * nll;
    probs[b] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  loss /= static_cast<double>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record(OpKind::kSigmoidCrossEntropy, Tensor({}, std::vector<double>{loss}), {logits},
                  [probs, ys, weights, batch](const Tensor& g, std::span<Tensor* const> in) {
                    if (!in[0]) return;
                    const double s = g[0] / static_cast<double>(batch);
                    for (std::size_t b = 0; b < batch; ++b) {
                      const std::size_t y = static_cast<std::size_t>(ys[b]);
                      (*in[0])[b] += weights[y] * s * (probs[b] - static_cast<double>(y));
                    }
                  });
}

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, double eps) {
  GradCheckResult result;
  Tensor analytic;
  std::vector<std::uint8_t> base_signature;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var y = f(tape, xv);
    base_signature = tape.kink_signature();
    analytic = tape.backward(y)[xv];
  }
  auto probe = [&](std::size_t i, double delta, bool& same_branch) {
    Tensor shifted = x;
    shifted[i] += delta;
    Tape tape;
    Var y = f(tape, tape.leaf(std::move(shifted), false));
    same_branch = same_branch && tape.kink_signature() == base_signature;
    return y.value()[0];
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    bool same_branch = true;
    const double plus = probe(i, eps, same_branch);
    const double minus = probe(i, -eps, same_branch);
    if (!same_branch) {
      result.skipped.push_back(i);
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const double rel = std::abs(a - numeric) / denom;
    ++result.checked;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace hgp::ad
