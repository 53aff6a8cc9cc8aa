#include "hgp/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include "hgp/error.hpp"
#include "hgp/tsv.hpp"

namespace hgp {

SupernodeReduction reduction_from_string(const std::string& text) {
  if (text == "mean") return SupernodeReduction::kMean;
  if (text == "max") return SupernodeReduction::kMax;
  throw ConfigError("reduction must be 'mean' or 'max', got '" + text + "'");
}

std::string to_string(SupernodeReduction r) { return r == SupernodeReduction::kMean ? "mean" : "max"; }

void SaliencyReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,feature_id,raw,normalized\n";
  for (std::size_t s = 0; s < n_samples(); ++s) {
    for (std::size_t f = 0; f < n_features(); ++f) {
      out << sample_ids[s] << ',' << feature_ids[f] << ',' << tsv::format_double(raw.at(s, f)) << ',';
      if (!zero_variance[s]) out << tsv::format_double(normalized.at(s, f));
      out << '\n';
    }
  }
}

void normalize_rows(SaliencyReport& report) {
  const std::size_t rows = report.raw.dim(0);
  const std::size_t cols = report.raw.dim(1);
  report.normalized = Tensor({rows, cols}, 0.0);
  report.zero_variance.assign(rows, false);
  for (std::size_t s = 0; s < rows; ++s) {
    double mean = 0.0;
    for (std::size_t f = 0; f < cols; ++f) mean += report.raw.at(s, f);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t f = 0; f < cols; ++f) {
      const double d = report.raw.at(s, f) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0) || sd <= 1e-300) {
      report.zero_variance[s] = true;
      continue;
    }
    for (std::size_t f = 0; f < cols; ++f) report.normalized.at(s, f) = (report.raw.at(s, f) - mean) / sd;
  }
}

namespace {

unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned n = requested;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs job(i) for i in [0, n) across workers; rethrows the first failure by index.
template <typename Job>
void parallel_for(std::size_t n, unsigned threads, Job job) {
  const unsigned workers = worker_count(threads, n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](unsigned w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Tensor row_of(const Tensor& x, std::size_t s) {
  const std::size_t cols = x.dim(1);
  Tensor row({1, cols});
  for (std::size_t f = 0; f < cols; ++f) row[f] = x.at(s, f);
  return row;
}

void check_finite(const Tensor& g, std::size_t sample) {
  if (!g.all_finite()) throw NumericError("non-finite saliency gradient for sample " + std::to_string(sample));
}

void check_class(const GnnModel& model, int target_class) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= model.config().n_classes) {
    throw LabelError("class " + std::to_string(target_class) + " is not valid for a " +
                     std::to_string(model.config().n_classes) + "-class model");
  }
}

void check_input(const GnnModel& model, const Tensor& x, std::span<const std::string> sample_ids) {
  if (x.rank() != 2 || x.dim(1) != model.input_size()) {
    throw ShapeError("saliency input must be {B, " + std::to_string(model.input_size()) + "}, got " +
                     shape_string(x.shape()));
  }
  if (sample_ids.size() != x.dim(0)) throw ShapeError("sample id count does not match the batch");
}

}  // namespace

Tensor score_gradients(const ScoreFunction& score, const Tensor& x, unsigned threads) {
  if (x.rank() != 2) throw ShapeError("saliency input must be rank 2, got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  Tensor out({rows, cols}, 0.0);
  parallel_for(rows, threads, [&](std::size_t s) {
    ad::Tape tape;
    const ad::Var xv = tape.leaf(row_of(x, s), true);
    const ad::Var y = score(tape, xv);
    const auto grads = tape.backward(y);
    const Tensor& g = grads[xv];
    check_finite(g, s);
    for (std::size_t f = 0; f < cols; ++f) out.at(s, f) = std::abs(g[f]);
  });
  return out;
}

ad::Var class_score(ad::Var logits, int target_class, HeadKind head) {
  const Shape& shape = logits.shape();
  if (shape.size() != 2) throw ShapeError("class_score expects {B, C} logits");
  Tensor mask(shape, 0.0);
  if (head == HeadKind::kBinary) {
    if (target_class != 0 && target_class != 1) throw LabelError("binary head class must be 0 or 1");
    for (std::size_t b = 0; b < shape[0]; ++b) mask.at(b, 0) = target_class == 1 ? 1.0 : -1.0;
  } else {
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= shape[1]) {
      throw LabelError("class " + std::to_string(target_class) + " out of range");
    }
    for (std::size_t b = 0; b < shape[0]; ++b) mask.at(b, static_cast<std::size_t>(target_class)) = 1.0;
  }
  ad::Tape& tape = *logits.tape();
  return ad::reduce_sum(ad::elementwise_mul(logits, tape.leaf(std::move(mask))));
}

SaliencyReport input_saliency(const GnnModel& model, const Tensor& x, std::span<const std::string> sample_ids,
                              int target_class, unsigned threads) {
  check_class(model, target_class);
  check_input(model, x, sample_ids);
  const HeadKind head = model.config().head;
  auto score = [&](ad::Tape& tape, ad::Var xv) {
    const auto params = model.bind(tape, false);
    const auto out = model.forward(tape, params, xv, GnnModel::ForwardOptions{});
    return class_score(out.logits, target_class, head);
  };
  SaliencyReport report;
  report.level = SaliencyLevel::kInput;
  report.target_class = target_class;
  report.sample_ids.assign(sample_ids.begin(), sample_ids.end());
  report.feature_ids = model.hierarchy().original().node_ids();
  report.raw = score_gradients(score, x, threads);
  normalize_rows(report);
  return report;
}

SupernodeSaliency supernode_saliency(const GnnModel& model, const Tensor& x, std::span<const std::string> sample_ids,
                                     int target_class, SupernodeReduction reduction, unsigned threads) {
  check_class(model, target_class);
  check_input(model, x, sample_ids);
  const HeadKind head = model.config().head;
  const std::size_t batch = x.dim(0);
  const std::size_t nodes = model.embedding_nodes();
  const std::size_t channels = model.embedding_channels();

  SupernodeSaliency result;
  result.raw = Tensor({batch, nodes, channels}, 0.0);
  parallel_for(batch, threads, [&](std::size_t s) {
    ad::Tape tape;
    const auto params = model.bind(tape, false);
    const ad::Var xv = tape.leaf(row_of(x, s), true);
    const auto out = model.forward(tape, params, xv, GnnModel::ForwardOptions{});
    const auto grads = tape.backward(class_score(out.logits, target_class, head));
    const Tensor& g = grads[out.embeddings];
    check_finite(g, s);
    for (std::size_t k = 0; k < nodes * channels; ++k) result.raw[s * nodes * channels + k] = std::abs(g[k]);
  });

  SaliencyReport& report = result.reduced;
  report.level = SaliencyLevel::kSupernode;
  report.target_class = target_class;
  report.sample_ids.assign(sample_ids.begin(), sample_ids.end());
  report.feature_ids = model.hierarchy().graph_at(static_cast<std::size_t>(model.config().n_levels))->node_ids();
  report.raw = Tensor({batch, nodes}, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t j = 0; j < nodes; ++j) {
      double acc = reduction == SupernodeReduction::kMean ? 0.0 : -1.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = result.raw.at(s, j, c);
        acc = reduction == SupernodeReduction::kMean ? acc + v : std::max(acc, v);
      }
      if (reduction == SupernodeReduction::kMean) acc /= static_cast<double>(channels);
      report.raw.at(s, j) = acc;
    }
  }
  normalize_rows(report);
  return result;
}

std::vector<RankedFeature> rank_features(const SaliencyReport& report, std::span<const std::size_t> group) {
  std::vector<std::size_t> members(group.begin(), group.end());
  if (group.empty()) {
    for (std::size_t s = 0; s < report.n_samples(); ++s) members.push_back(s);
  }
  if (members.empty()) throw ContractError("rank_features needs a non-empty sample group");
  const std::size_t cols = report.n_features();
  std::vector<RankedFeature> out(cols);
  for (std::size_t f = 0; f < cols; ++f) {
    double sum = 0.0;
    for (std::size_t s : members) {
      if (s >= report.n_samples()) throw IndexError("sample index " + std::to_string(s) + " out of range");
      sum += report.raw.at(s, f);
    }
    out[f] = {f, report.feature_ids[f], sum / static_cast<double>(members.size())};
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedFeature& a, const RankedFeature& b) {
    if (a.mean_saliency != b.mean_saliency) return a.mean_saliency > b.mean_saliency;
    if (a.feature_id != b.feature_id) return a.feature_id < b.feature_id;
    return a.feature < b.feature;
  });
  return out;
}

void write_ranking_tsv(const std::vector<RankedFeature>& ranking, const std::filesystem::path& path,
                       std::size_t top_k) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "rank\tfeature_id\tmean_saliency\n";
  const std::size_t n = top_k == 0 ? ranking.size() : std::min(top_k, ranking.size());
  for (std::size_t i = 0; i < n; ++i) {
    out << (i + 1) << '\t' << ranking[i].feature_id << '\t' << tsv::format_double(ranking[i].mean_saliency) << '\n';
  }
}

}  // namespace hgp
