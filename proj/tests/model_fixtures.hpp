#pragma once

// Helpers shared by the model tests: small random hierarchies, parameter
// randomization and the translation of a GnnModel into the dense oracle.

#include <memory>
#include <random>

#include "dense_reference.hpp"
#include "hgp/coarsen.hpp"
#include "hgp/gnn.hpp"
#include "hgp/rng.hpp"
#include "hgp/synth.hpp"

namespace fixtures {

inline std::shared_ptr<const hgp::CoarseningHierarchy> random_hierarchy(std::size_t n, std::size_t extra,
                                                                        int levels, std::uint64_t seed) {
  auto g = std::make_shared<const hgp::GeneGraph>(hgp::random_connected_graph(n, extra, hgp::hash64(seed, 1), "n"));
  return std::make_shared<const hgp::CoarseningHierarchy>(hgp::build_hierarchy(g, levels, seed));
}

// Replaces every parameter and the batch-norm buffers with random values so
// that no term of the forward pass is trivially zero or one.
inline void randomize(hgp::GnnModel& model, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.5, 1.5);
  for (auto& p : model.parameters()) {
    for (double& v : p.value.values()) v = u(gen);
  }
  for (double& v : model.batchnorm_state().running_mean.values()) v = u(gen);
  for (double& v : model.batchnorm_state().running_var.values()) v = pos(gen);
}

inline oracle::Matrix to_matrix(const hgp::Tensor& t) { return oracle::from_tensor(t); }

inline std::vector<double> to_vector(const hgp::Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline oracle::Matrix dense_adjacency(const hgp::GeneGraph& g) {
  oracle::Matrix a = oracle::zeros(g.n_nodes(), g.n_nodes());
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    for (const auto& nb : g.neighbors(i)) a[i][nb.index] = nb.weight;
  }
  return a;
}

// Reads the model's parameters into the dense oracle's layout. Structure
// (graphs, assignments) comes from the hierarchy; arithmetic is left to the oracle.
inline oracle::DenseModel to_dense(const hgp::GnnModel& model) {
  oracle::DenseModel d;
  const auto& cfg = model.config();
  const auto& h = model.hierarchy();
  for (int l = 0; l < cfg.n_levels; ++l) {
    const auto level = static_cast<std::size_t>(l);
    oracle::DenseLevel dl;
    const auto& a = h.level(level).assignment;
    dl.s = oracle::assignment_matrix(a.cluster_of, a.n_coarse);
    dl.w = to_vector(model.parameter("pool" + std::to_string(l) + ".weight"));
    if (l >= cfg.conv_start_level) {
      dl.conv = true;
      dl.laplacian = oracle::scaled_laplacian(dense_adjacency(*h.graph_at(level)), model.laplacian(level).lambda_max());
      dl.theta0 = to_matrix(model.parameter("conv" + std::to_string(l) + ".theta0"));
      dl.theta1 = to_matrix(model.parameter("conv" + std::to_string(l) + ".theta1"));
    }
    d.levels.push_back(std::move(dl));
  }
  d.fc1_w = to_matrix(model.parameter("fc1.weight"));
  d.fc1_b = to_vector(model.parameter("fc1.bias"));
  d.gamma = to_vector(model.parameter("bn.gamma"));
  d.beta = to_vector(model.parameter("bn.beta"));
  d.running_mean = to_vector(model.batchnorm_state().running_mean);
  d.running_var = to_vector(model.batchnorm_state().running_var);
  d.bn_eps = cfg.bn_epsilon;
  d.fc2_w = to_matrix(model.parameter("fc2.weight"));
  d.fc2_b = to_vector(model.parameter("fc2.bias"));
  return d;
}

inline hgp::Tensor random_input(std::size_t batch, std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  hgp::Tensor x({batch, n});
  for (double& v : x.values()) v = u(gen);
  return x;
}

// Largest absolute difference between the model's eval-mode logits and
// embeddings and those of the dense oracle.
inline double forward_vs_oracle(const hgp::GnnModel& model, const hgp::Tensor& x) {
  hgp::ad::Tape tape;
  const auto params = model.bind(tape, false);
  const auto out = model.forward(tape, params, tape.leaf(x), {});
  const auto dense = oracle::forward(to_dense(model), oracle::from_tensor(x));
  double worst = oracle::max_abs_diff(dense.logits, oracle::from_tensor(out.logits.value()));
  const auto& emb = out.embeddings.value();
  for (std::size_t b = 0; b < dense.embeddings.size(); ++b) {
    for (std::size_t i = 0; i < emb.dim(1); ++i) {
      for (std::size_t f = 0; f < emb.dim(2); ++f) {
        worst = std::max(worst, std::abs(dense.embeddings[b][i][f] - emb.at(b, i, f)));
      }
    }
  }
  return worst;
}

}  // namespace fixtures
