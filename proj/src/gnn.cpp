#include "hgp/gnn.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hgp/digest.hpp"
#include "hgp/error.hpp"
#include "hgp/rng.hpp"

namespace hgp {

using ojson = nlohmann::ordered_json;

std::size_t ArchitectureConfig::conv_levels() const {
  return n_levels > conv_start_level ? static_cast<std::size_t>(n_levels - conv_start_level) : 0;
}

std::vector<std::size_t> ArchitectureConfig::channels() const {
  if (!channel_schedule.empty()) return channel_schedule;
  std::vector<std::size_t> out;
  std::size_t c = 2;
  for (std::size_t k = 0; k < conv_levels(); ++k, c *= 2) out.push_back(c);
  return out;
}

std::size_t ArchitectureConfig::n_outputs() const { return head == HeadKind::kBinary ? 1 : n_classes; }

void ArchitectureConfig::validate(std::size_t hierarchy_depth) const {
  if (n_levels < 0 || static_cast<std::size_t>(n_levels) > hierarchy_depth) {
    throw ConfigError("architecture: n_levels " + std::to_string(n_levels) + " outside [0, " +
                      std::to_string(hierarchy_depth) + "]");
  }
  if (conv_start_level < 0 || conv_start_level > n_levels) {
    throw ConfigError("architecture: conv_start_level must be in [0, n_levels]");
  }
  if (!channel_schedule.empty() && channel_schedule.size() != conv_levels()) {
    throw ConfigError("architecture: channel schedule has " + std::to_string(channel_schedule.size()) +
                      " entries for " + std::to_string(conv_levels()) + " conv levels");
  }
  for (std::size_t c : channel_schedule) {
    if (c == 0) throw ConfigError("architecture: channel counts must be positive");
  }
  if (hidden_units == 0) throw ConfigError("architecture: hidden_units must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("architecture: dropout must be in [0, 1)");
  if (head == HeadKind::kBinary && n_classes != 2) throw ConfigError("architecture: binary head needs 2 classes");
  if (head == HeadKind::kMulticlass && n_classes < 2) throw ConfigError("architecture: multiclass needs >= 2 classes");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("architecture: bn_momentum must be in (0, 1]");
  if (!(bn_epsilon >= 0.0)) throw ConfigError("architecture: bn_epsilon must be nonnegative");
}

ojson architecture_to_json(const ArchitectureConfig& c) {
  ojson j;
  j["levels"] = c.n_levels;
  j["conv_start_level"] = c.conv_start_level;
  j["channels"] = c.channel_schedule;
  j["hidden_units"] = c.hidden_units;
  j["dropout"] = c.dropout_p;
  j["head"] = c.head == HeadKind::kBinary ? "binary" : "multiclass";
  j["n_classes"] = c.n_classes;
  j["bn_momentum"] = c.bn_momentum;
  j["bn_epsilon"] = c.bn_epsilon;
  j["lambda_max"] = c.lambda_mode == LambdaMode::kApproximate ? "approximate" : "estimated";
  return j;
}

ArchitectureConfig architecture_from_json(const ojson& doc) {
  static const std::set<std::string> known{"levels",    "conv_start_level", "channels",    "hidden_units",
                                           "dropout",   "head",             "n_classes",   "bn_momentum",
                                           "bn_epsilon", "lambda_max"};
  if (!doc.is_object()) throw ConfigError("architecture: expected an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("architecture: unknown key '" + key + "'");
  }
  ArchitectureConfig c;
  try {
    if (doc.contains("levels")) c.n_levels = doc["levels"].get<int>();
    if (doc.contains("conv_start_level")) c.conv_start_level = doc["conv_start_level"].get<int>();
    if (doc.contains("channels")) c.channel_schedule = doc["channels"].get<std::vector<std::size_t>>();
    if (doc.contains("hidden_units")) c.hidden_units = doc["hidden_units"].get<std::size_t>();
    if (doc.contains("dropout")) c.dropout_p = doc["dropout"].get<double>();
    if (doc.contains("head")) {
      const auto head = doc["head"].get<std::string>();
      if (head == "binary") {
        c.head = HeadKind::kBinary;
      } else if (head == "multiclass") {
        c.head = HeadKind::kMulticlass;
      } else {
        throw ConfigError("architecture: head must be 'binary' or 'multiclass'");
      }
    }
    if (doc.contains("n_classes")) c.n_classes = doc["n_classes"].get<std::size_t>();
    if (doc.contains("bn_momentum")) c.bn_momentum = doc["bn_momentum"].get<double>();
    if (doc.contains("bn_epsilon")) c.bn_epsilon = doc["bn_epsilon"].get<double>();
    if (doc.contains("lambda_max")) {
      const auto mode = doc["lambda_max"].get<std::string>();
      if (mode == "approximate") {
        c.lambda_mode = LambdaMode::kApproximate;
      } else if (mode == "estimated") {
        c.lambda_mode = LambdaMode::kEstimated;
      } else {
        throw ConfigError("architecture: lambda_max must be 'approximate' or 'estimated'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  return c;
}

std::size_t baseline_param_count(std::size_t n_genes, std::size_t hidden, std::size_t n_outputs) {
  return n_genes * hidden + hidden + hidden * n_outputs + n_outputs + 2 * hidden;
}

ad::Var cheb_conv(ad::Var h, const LaplacianOperator& lap, ad::Var theta0, ad::Var theta1) {
  const Shape& hs = h.shape();
  const Shape& t0 = theta0.shape();
  if (hs.empty() || t0.size() != 2 || t0 != theta1.shape() || hs.back() != t0[0]) {
    throw ShapeError("cheb_conv: features " + shape_string(hs) + " vs filters " + shape_string(t0) + ", " +
                     shape_string(theta1.shape()));
  }
  ad::Var self = ad::matmul(h, theta0);
  ad::Var neigh = ad::matmul(ad::sparse_apply(h, lap), theta1);
  return ad::add(self, neigh);
}

ad::Var weighted_pool(ad::Var h, const AssignmentMap& assignment, ad::Var w) {
  if (w.shape() != Shape{assignment.n_fine}) {
    throw ShapeError("weighted_pool: weight vector " + shape_string(w.shape()) + " for " +
                     std::to_string(assignment.n_fine) + " nodes");
  }
  return ad::scatter_pool(h, assignment.cluster_of, assignment.n_coarse, w);
}

namespace {

std::string conv_name(int level, int tap) {
  return "conv" + std::to_string(level) + ".theta" + std::to_string(tap);
}
std::string pool_name(int level) { return "pool" + std::to_string(level) + ".weight"; }

Tensor uniform_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

GnnModel::GnnModel(ArchitectureConfig config, std::shared_ptr<const CoarseningHierarchy> hierarchy,
                   std::uint64_t seed)
    : config_(std::move(config)), hierarchy_(std::move(hierarchy)) {
  if (!hierarchy_) throw ContractError("model needs a hierarchy");
  config_.validate(hierarchy_->depth());
  Rng rng(hash64(seed, seed_stream::kInit));
  const auto channels = config_.channels();
  std::size_t features = 1;
  std::size_t conv_index = 0;
  for (int l = 0; l < config_.n_levels; ++l) {
    const std::size_t n_l = hierarchy_->size_at(static_cast<std::size_t>(l));
    if (l >= config_.conv_start_level) {
      const std::size_t out = channels[conv_index++];
      params_.push_back({conv_name(l, 0), uniform_tensor({features, out}, 2 * features, rng)});
      params_.push_back({conv_name(l, 1), uniform_tensor({features, out}, 2 * features, rng)});
      laplacians_.emplace_back(hierarchy_->graph_at(static_cast<std::size_t>(l)), config_.lambda_mode);
      features = out;
    }
    params_.push_back({pool_name(l), Tensor({n_l}, 1.0)});
  }
  const std::size_t flat = flat_features();
  const std::size_t hidden = config_.hidden_units;
  const std::size_t outputs = config_.n_outputs();
  params_.push_back({"fc1.weight", uniform_tensor({flat, hidden}, flat, rng)});
  params_.push_back({"fc1.bias", Tensor({hidden}, 0.0)});
  params_.push_back({"bn.gamma", Tensor({hidden}, 1.0)});
  params_.push_back({"bn.beta", Tensor({hidden}, 0.0)});
  params_.push_back({"fc2.weight", uniform_tensor({hidden, outputs}, hidden, rng)});
  params_.push_back({"fc2.bias", Tensor({outputs}, 0.0)});
  bn_state_.running_mean = Tensor({hidden}, 0.0);
  bn_state_.running_var = Tensor({hidden}, 1.0);
}

std::optional<std::size_t> GnnModel::parameter_index(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

Tensor& GnnModel::parameter(std::string_view name) {
  const auto i = parameter_index(name);
  if (!i) throw IndexError("no parameter named '" + std::string(name) + "'");
  return params_[*i].value;
}

const Tensor& GnnModel::parameter(std::string_view name) const {
  const auto i = parameter_index(name);
  if (!i) throw IndexError("no parameter named '" + std::string(name) + "'");
  return params_[*i].value;
}

std::size_t GnnModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t GnnModel::embedding_nodes() const {
  return hierarchy_->size_at(static_cast<std::size_t>(config_.n_levels));
}

std::size_t GnnModel::embedding_channels() const {
  const auto channels = config_.channels();
  return channels.empty() ? 1 : channels.back();
}

const LaplacianOperator& GnnModel::laplacian(std::size_t level) const {
  if (level < static_cast<std::size_t>(config_.conv_start_level) || level >= static_cast<std::size_t>(config_.n_levels)) {
    throw IndexError("level " + std::to_string(level) + " has no convolution");
  }
  return laplacians_[level - static_cast<std::size_t>(config_.conv_start_level)];
}

std::vector<ad::Var> GnnModel::bind(ad::Tape& tape, bool requires_grad) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

GnnModel::Output GnnModel::forward(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x,
                                   const ForwardOptions& options) const {
  ad::BatchNormState scratch = bn_state_;
  ForwardOptions opts = options;
  opts.update_running_stats = false;
  return forward_impl(tape, params, x, opts, scratch);
}

GnnModel::Output GnnModel::forward_train(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x,
                                         const ForwardOptions& options) {
  return forward_impl(tape, params, x, options, bn_state_);
}

GnnModel::Output GnnModel::forward_impl(ad::Tape& tape, std::span<const ad::Var> params, ad::Var x,
                                        const ForwardOptions& options, ad::BatchNormState& state) const {
  if (params.size() != params_.size()) throw ShapeError("forward: wrong number of bound parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != params_[i].value.shape()) {
      throw ShapeError("forward: parameter '" + params_[i].name + "' bound with shape " +
                       shape_string(params[i].shape()));
    }
  }
  const Shape& xs = x.shape();
  const std::size_t n0 = input_size();
  if (xs.size() != 2 || xs[1] != n0 || xs[0] == 0) {
    throw ShapeError("forward: input must be {B, " + std::to_string(n0) + "}, got " + shape_string(xs));
  }
  const std::size_t batch = xs[0];

  std::size_t p = 0;
  ad::Var h = ad::reshape(x, {batch, n0, 1});
  for (int l = 0; l < config_.n_levels; ++l) {
    const auto level = static_cast<std::size_t>(l);
    if (l >= config_.conv_start_level) {
      h = cheb_conv(h, laplacian(level), params[p], params[p + 1]);
      p += 2;
    }
    h = weighted_pool(h, hierarchy_->level(level).assignment, params[p++]);
    h = ad::relu(h);
  }
  Output out;
  out.embeddings = h;
  ad::Var flat = ad::reshape(h, {batch, flat_features()});
  ad::Var hidden = ad::add_bias(ad::matmul(flat, params[p]), params[p + 1]);
  if (options.train && config_.dropout_p > 0.0) {
    Rng rng(options.dropout_seed);
    hidden = ad::dropout(hidden, ad::dropout_mask(hidden.shape(), config_.dropout_p, rng));
  }
  ad::BatchNormOptions bn;
  bn.train = options.train;
  bn.momentum = config_.bn_momentum;
  bn.epsilon = config_.bn_epsilon;
  bn.update_running_stats = options.update_running_stats;
  hidden = ad::batchnorm(hidden, params[p + 2], params[p + 3], state, bn);
  hidden = ad::relu(hidden);
  out.logits = ad::add_bias(ad::matmul(hidden, params[p + 4]), params[p + 5]);
  return out;
}

Tensor GnnModel::predict_logits(const Tensor& x) const {
  ad::Tape tape;
  const auto params = bind(tape, false);
  return forward(tape, params, tape.leaf(x), {}).logits.value();
}

namespace {

ojson tensor_to_json(const Tensor& t) {
  if (t.rank() == 1) return ojson(t.storage());
  if (t.rank() != 2) throw ContractError("checkpoint: only rank-1 and rank-2 tensors are stored");
  ojson rows = ojson::array();
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    ojson row = ojson::array();
    for (std::size_t c = 0; c < t.dim(1); ++c) row.push_back(t.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor tensor_from_json(const ojson& j, const Shape& expected, const std::string& name) {
  std::vector<double> values;
  values.reserve(shape_size(expected));
  if (expected.size() == 1) {
    if (!j.is_array() || j.size() != expected[0]) throw LoadError("checkpoint: '" + name + "' has the wrong shape");
    for (const auto& v : j) values.push_back(v.get<double>());
  } else {
    if (!j.is_array() || j.size() != expected[0]) throw LoadError("checkpoint: '" + name + "' has the wrong shape");
    for (const auto& row : j) {
      if (!row.is_array() || row.size() != expected[1]) {
        throw LoadError("checkpoint: '" + name + "' has the wrong shape");
      }
      for (const auto& v : row) values.push_back(v.get<double>());
    }
  }
  Tensor t(expected, std::move(values));
  if (!t.all_finite()) throw LoadError("checkpoint: '" + name + "' contains non-finite values");
  return t;
}

}  // namespace

ojson GnnModel::to_checkpoint_json() const {
  ojson doc;
  doc["format_version"] = 1;
  doc["config"] = architecture_to_json(config_);
  doc["hierarchy_digest"] = hex64(hierarchy_->digest());
  doc["n_inputs"] = input_size();
  ojson params = ojson::object();
  for (const auto& p : params_) {
    if (!p.value.all_finite()) throw NumericError("checkpoint: parameter '" + p.name + "' is not finite");
    params[p.name] = tensor_to_json(p.value);
  }
  doc["parameters"] = std::move(params);
  ojson buffers = ojson::object();
  buffers["bn.running_mean"] = tensor_to_json(bn_state_.running_mean);
  buffers["bn.running_var"] = tensor_to_json(bn_state_.running_var);
  doc["buffers"] = std::move(buffers);
  return doc;
}

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path) {
  const std::string text = model.to_checkpoint_json().dump();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text << '\n';
}

GnnModel checkpoint_from_json(const std::string& text, std::shared_ptr<const CoarseningHierarchy> hierarchy,
                              bool force) {
  if (!hierarchy) throw ContractError("checkpoint load needs a hierarchy");
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: not valid JSON (") + e.what() + ")");
  }
  try {
    if (!doc.is_object() || doc.value("format_version", 0) != 1) {
      throw LoadError("checkpoint: missing or unsupported format_version");
    }
    const std::size_t n_inputs = doc.at("n_inputs").get<std::size_t>();
    if (n_inputs != hierarchy->size_at(0)) {
      throw LoadError("checkpoint: model expects " + std::to_string(n_inputs) + " inputs but the hierarchy has " +
                      std::to_string(hierarchy->size_at(0)) + " nodes");
    }
    ArchitectureConfig config;
    try {
      config = architecture_from_json(doc.at("config"));
      config.validate(hierarchy->depth());
    } catch (const ConfigError& e) {
      throw LoadError(std::string("checkpoint: ") + e.what());
    }
    const std::string digest = doc.at("hierarchy_digest").get<std::string>();
    if (!force && digest != hex64(hierarchy->digest())) {
      throw LoadError("checkpoint: hierarchy digest " + digest + " does not match " + hex64(hierarchy->digest()) +
                      " (use --force to override)");
    }
    GnnModel model(config, std::move(hierarchy), 0);
    const ojson& params = doc.at("parameters");
    if (params.size() != model.parameters().size()) throw LoadError("checkpoint: parameter set does not match config");
    for (auto& p : model.parameters()) {
      if (!params.contains(p.name)) throw LoadError("checkpoint: missing parameter '" + p.name + "'");
      p.value = tensor_from_json(params.at(p.name), p.value.shape(), p.name);
    }
    const ojson& buffers = doc.at("buffers");
    auto& bn = model.batchnorm_state();
    bn.running_mean = tensor_from_json(buffers.at("bn.running_mean"), bn.running_mean.shape(), "bn.running_mean");
    bn.running_var = tensor_from_json(buffers.at("bn.running_var"), bn.running_var.shape(), "bn.running_var");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
}

GnnModel load_checkpoint(const std::filesystem::path& path, std::shared_ptr<const CoarseningHierarchy> hierarchy,
                         bool force) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str(), std::move(hierarchy), force);
}

}  // namespace hgp
