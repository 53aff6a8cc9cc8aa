#include "hgp/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "hgp/error.hpp"
#include "hgp/rng.hpp"
#include "hgp/tsv.hpp"

namespace hgp {

using ojson = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (max_epochs < 0) throw ConfigError("train: max_epochs must be nonnegative");
  if (patience < 1) throw ConfigError("train: patience must be positive");
  double sum = 0.0;
  for (double f : split) {
    if (!(f >= 0.0)) throw ConfigError("train: split fractions must be nonnegative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("train: split fractions must sum to 1");
  if (!(split[0] > 0.0)) throw ConfigError("train: the training fraction must be positive");
}

ojson train_config_to_json(const TrainConfig& c) {
  ojson j;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["class_weighting"] = c.class_weighting == ClassWeighting::kNone ? "none" : "inverse-frequency";
  j["split"] = c.split;
  return j;
}

TrainConfig train_config_from_json(const ojson& doc) {
  static const std::set<std::string> known{"learning_rate", "beta1",    "beta2",          "epsilon", "batch_size",
                                           "max_epochs",    "patience", "class_weighting", "split"};
  if (!doc.is_object()) throw ConfigError("train: expected an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("train: unknown key '" + key + "'");
  }
  TrainConfig c;
  try {
    if (doc.contains("learning_rate")) c.learning_rate = doc["learning_rate"].get<double>();
    if (doc.contains("beta1")) c.beta1 = doc["beta1"].get<double>();
    if (doc.contains("beta2")) c.beta2 = doc["beta2"].get<double>();
    if (doc.contains("epsilon")) c.epsilon = doc["epsilon"].get<double>();
    if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<std::size_t>();
    if (doc.contains("max_epochs")) c.max_epochs = doc["max_epochs"].get<int>();
    if (doc.contains("patience")) c.patience = doc["patience"].get<int>();
    if (doc.contains("class_weighting")) {
      const auto w = doc["class_weighting"].get<std::string>();
      if (w == "none") {
        c.class_weighting = ClassWeighting::kNone;
      } else if (w == "inverse-frequency") {
        c.class_weighting = ClassWeighting::kInverseFrequency;
      } else {
        throw ConfigError("train: class_weighting must be 'none' or 'inverse-frequency'");
      }
    }
    if (doc.contains("split")) {
      const auto v = doc["split"].get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("train: split needs three fractions");
      c.split = {v[0], v[1], v[2]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

ojson Split::to_json() const {
  ojson j;
  j["train"] = train;
  j["val"] = val;
  j["test"] = test;
  return j;
}

Split stratified_split(std::span<const int> labels, std::array<double, 3> fractions, std::uint64_t seed) {
  if (labels.empty()) throw StratificationError("cannot split an empty label set");
  int max_label = 0;
  for (int y : labels) {
    if (y < 0) throw LabelError("negative class label");
    max_label = std::max(max_label, y);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Rng rng(hash64(seed, seed_stream::kSplit));
  Split out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 3) {
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                " sample(s); stratification needs at least 3");
    }
    rng.shuffle(members);
    const double n = static_cast<double>(members.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      const double exact = fractions[static_cast<std::size_t>(p)] * n;
      counts[static_cast<std::size_t>(p)] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      remainder[static_cast<std::size_t>(p)] = exact - static_cast<double>(counts[static_cast<std::size_t>(p)]);
      assigned += counts[static_cast<std::size_t>(p)];
    }
    std::array<int, 3> order{2, 1, 0};
    // Larger remainders first; equal remainders favour the later partition.
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainder[static_cast<std::size_t>(a)] > remainder[static_cast<std::size_t>(b)] + 1e-12; });
    for (std::size_t k = 0; assigned < members.size(); ++k, ++assigned) {
      ++counts[static_cast<std::size_t>(order[k % 3])];
    }
    auto it = members.begin();
    auto take = [&](std::vector<std::size_t>& dst, std::size_t count) {
      dst.insert(dst.end(), it, it + static_cast<std::ptrdiff_t>(count));
      it += static_cast<std::ptrdiff_t>(count);
    };
    take(out.train, counts[0]);
    take(out.val, counts[1]);
    take(out.test, counts[2]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

ad::Var cross_entropy(ad::Var logits, std::span<const int> labels, std::span<const double> class_weights,
                      HeadKind head) {
  if (head == HeadKind::kBinary) return ad::sigmoid_cross_entropy(logits, labels, class_weights);
  return ad::softmax_cross_entropy(logits, labels, class_weights);
}

std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t n_classes) {
  std::vector<double> counts(n_classes, 0.0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
  std::vector<double> w(n_classes, 0.0);
  const double n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    w[c] = counts[c] > 0.0 ? n / (static_cast<double>(n_classes) * counts[c]) : 0.0;
  }
  return w;
}

void AdamOptimizer::step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameters");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape(), 0.0);
      v_.emplace_back(p.value.shape(), 0.0);
    }
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, t_);
  const double correction2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].value.values();
    auto g = grads[i].values();
    if (g.size() != p.size()) throw ShapeError("adam: gradient shape mismatch for '" + params[i].name + "'");
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_f1_macro\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << tsv::format_double(e.train_loss) << ',' << tsv::format_double(e.val_f1_macro) << '\n';
  }
}

std::vector<int> predict_classes(const GnnModel& model, const Tensor& x) {
  const Tensor logits = model.predict_logits(x);
  const std::size_t batch = logits.dim(0);
  const std::size_t outputs = logits.dim(1);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (model.config().head == HeadKind::kBinary) {
      out[b] = logits.at(b, 0) >= 0.0 ? 1 : 0;
    } else {
      std::size_t best = 0;
      for (std::size_t c = 1; c < outputs; ++c) {
        if (logits.at(b, c) > logits.at(b, best)) best = c;
      }
      out[b] = static_cast<int>(best);
    }
  }
  return out;
}

namespace {

constexpr std::size_t kEvalBatch = 256;

void check_dataset(const GnnModel& model, const ExpressionDataset& ds) {
  if (ds.n_genes() != model.input_size()) {
    throw ShapeError("dataset has " + std::to_string(ds.n_genes()) + " genes but the model expects " +
                     std::to_string(model.input_size()));
  }
  if (!ds.labeled()) throw ContractError("dataset has no labels");
  const std::size_t classes = model.config().n_classes;
  for (int y : ds.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelError("label " + std::to_string(y) + " does not fit a " + std::to_string(classes) + "-class head");
    }
  }
}

// Eval-mode mean loss over a partition.
double partition_loss(const GnnModel& model, const ExpressionDataset& ds, std::span<const std::size_t> partition,
                      std::span<const double> class_weights) {
  double total = 0.0;
  for (std::size_t start = 0; start < partition.size(); start += kEvalBatch) {
    const auto chunk = partition.subspan(start, std::min(kEvalBatch, partition.size() - start));
    ad::Tape tape;
    const auto logits = tape.leaf(model.predict_logits(ds.rows(chunk)));
    const auto labels = ds.labels_of(chunk);
    total += cross_entropy(logits, labels, class_weights, model.config().head).value()[0] *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(partition.size());
}

}  // namespace

EvalReport evaluate(const GnnModel& model, const ExpressionDataset& ds, std::span<const std::size_t> partition) {
  if (partition.empty()) throw ContractError("evaluation on an empty partition");
  check_dataset(model, ds);
  std::vector<int> predicted;
  predicted.reserve(partition.size());
  for (std::size_t start = 0; start < partition.size(); start += kEvalBatch) {
    const auto chunk = partition.subspan(start, std::min(kEvalBatch, partition.size() - start));
    const auto p = predict_classes(model, ds.rows(chunk));
    predicted.insert(predicted.end(), p.begin(), p.end());
  }
  const auto truth = ds.labels_of(partition);
  return compute_report(truth, predicted, model.config().n_classes);
}

TrainHistory fit(GnnModel& model, const ExpressionDataset& ds, const Split& split, const TrainConfig& config) {
  config.validate();
  check_dataset(model, ds);
  if (split.train.empty()) throw ContractError("training partition is empty");
  const HeadKind head = model.config().head;
  const std::size_t classes = model.config().n_classes;
  const std::vector<int> train_labels = ds.labels_of(split.train);
  std::vector<double> class_weights;
  if (config.class_weighting == ClassWeighting::kInverseFrequency) {
    class_weights = inverse_frequency_weights(train_labels, classes);
  }
  // Model selection falls back to the training partition when there is no validation data.
  const std::vector<std::size_t>& selection = split.val.empty() ? split.train : split.val;

  AdamOptimizer adam(config);
  TrainHistory history;
  std::vector<NamedTensor> best_params = model.parameters();
  ad::BatchNormState best_bn = model.batchnorm_state();
  double best_f1 = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const std::uint64_t shuffle_seed = hash64(config.seed, seed_stream::kShuffle);
  const std::uint64_t dropout_seed = hash64(config.seed, seed_stream::kDropout);
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng rng(hash64(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = split.train;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index, ++step) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(config.batch_size, order.size() - start));
      const auto labels = ds.labels_of(batch);
      ad::Tape tape;
      const auto params = model.bind(tape, true);
      ad::Var loss;
      try {
        GnnModel::ForwardOptions opts;
        opts.train = true;
        opts.dropout_seed = hash64(dropout_seed, step);
        opts.update_running_stats = true;
        const auto out = model.forward_train(tape, params, tape.leaf(ds.rows(batch)), opts);
        loss = cross_entropy(out.logits, labels, class_weights, head);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                           e.what());
      }
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      loss_sum += value * static_cast<double>(batch.size());
      const auto grads = tape.backward(loss);
      std::vector<Tensor> g;
      g.reserve(params.size());
      for (ad::Var p : params) g.push_back(grads[p]);
      adam.step(model.parameters(), g);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_f1_macro = evaluate(model, ds, selection).f1_macro;
    history.epochs.push_back(rec);
    const double val_loss = partition_loss(model, ds, selection, class_weights);
    // Equal F1-macro counts as progress only when the validation loss drops.
    if (rec.val_f1_macro > best_f1 || (rec.val_f1_macro == best_f1 && val_loss < best_loss)) {
      best_f1 = rec.val_f1_macro;
      best_loss = val_loss;
      history.best_epoch = epoch;
      best_params = model.parameters();
      best_bn = model.batchnorm_state();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }
  if (history.best_epoch >= 0) {
    model.parameters() = std::move(best_params);
    model.batchnorm_state() = std::move(best_bn);
  }
  return history;
}

std::vector<AblationRow> ablation_sweep(std::shared_ptr<const CoarseningHierarchy> hierarchy,
                                        const ExpressionDataset& ds, const Split& split,
                                        const ArchitectureConfig& base, const TrainConfig& train, SweepKind kind,
                                        std::uint64_t seed) {
  std::vector<ArchitectureConfig> configs;
  for (int k = 0; k <= base.n_levels; ++k) {
    ArchitectureConfig c = base;
    if (kind == SweepKind::kConvStart) {
      c.conv_start_level = k;
    } else {
      c.n_levels = k;
      c.conv_start_level = 0;
    }
    // A user schedule is cut to the leading entries, doubling past its end.
    c.channel_schedule.clear();
    if (!base.channel_schedule.empty()) {
      for (std::size_t i = 0; i < c.conv_levels(); ++i) {
        c.channel_schedule.push_back(i < base.channel_schedule.size() ? base.channel_schedule[i]
                                                                      : 2 * c.channel_schedule.back());
      }
    }
    configs.push_back(c);
  }
  std::vector<AblationRow> rows;
  for (const auto& c : configs) {
    GnnModel model(c, hierarchy, seed);
    const TrainHistory history = fit(model, ds, split, train);
    AblationRow row;
    row.n_levels = c.n_levels;
    row.conv_start_level = c.conv_start_level;
    row.conv_levels = c.conv_levels();
    row.param_count = model.param_count();
    row.best_epoch = history.best_epoch;
    row.val_f1_macro = split.val.empty() ? 0.0 : evaluate(model, ds, split.val).f1_macro;
    row.test_f1_macro = split.test.empty() ? 0.0 : evaluate(model, ds, split.test).f1_macro;
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_tsv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "n_levels\tconv_start_level\tconv_levels\tparam_count\tbest_epoch\tval_f1_macro\ttest_f1_macro\n";
  for (const auto& r : rows) {
    out << r.n_levels << '\t' << r.conv_start_level << '\t' << r.conv_levels << '\t' << r.param_count << '\t'
        << r.best_epoch << '\t' << tsv::format_double(r.val_f1_macro) << '\t' << tsv::format_double(r.test_f1_macro)
        << '\n';
  }
}

}  // namespace hgp
