#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "hgp/autodiff.hpp"
#include "hgp/cli.hpp"
#include "hgp/coarsen.hpp"
#include "hgp/digest.hpp"
#include "hgp/enrichment.hpp"
#include "hgp/error.hpp"
#include "hgp/rng.hpp"
#include "hgp/tsv.hpp"

namespace hgp::cli {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Flags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> levels;
  std::optional<int> conv_start;
  std::optional<int> target_class;
  std::optional<std::size_t> top_k;
  std::string checkpoint;
  std::string partition;
  std::string sweep = "conv-start";
  bool force = false;
};

// Collects written files so the manifest can list their digests.
class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }
  fs::path path(const std::string& name) {
    names_.push_back(name);
    return dir_ / name;
  }
  void write_text(const std::string& name, const std::string& text) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir_ / name).string());
    out << text;
  }
  void write_json(const std::string& name, const ojson& doc) { write_text(name, doc.dump(2) + "\n"); }
  void write_manifest(const std::string& command, const RunConfig& config) {
    std::sort(names_.begin(), names_.end());
    names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
    ojson m;
    m["format_version"] = kManifestFormat;
    m["command"] = command;
    m["seed"] = config.seed;
    m["outputs"] = ojson::array();
    for (const auto& n : names_) {
      m["outputs"].push_back({{"file", n}, {"digest", hex64(file_digest(dir_ / n))}});
    }
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write manifest");
    out << m.dump(2) << "\n";
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

void require_file(const std::optional<fs::path>& p, const std::string& what) {
  if (p && !fs::is_regular_file(*p)) throw IoError(what + " not found: " + p->string());
}

RunConfig resolve_config(const Flags& flags, bool config_required) {
  RunConfig config;
  if (!flags.config.empty()) {
    config = load_run_config(flags.config);
  } else if (config_required) {
    throw ConfigError("--config is required");
  }
  if (flags.seed) {
    config.seed = *flags.seed;
    config.train.seed = *flags.seed;
    if (config.data.synthetic) config.data.synthetic->seed = *flags.seed;
  }
  if (flags.levels) {
    config.coarsen.levels = *flags.levels;
    config.architecture.n_levels = *flags.levels;
    config.architecture.conv_start_level = std::min(config.architecture.conv_start_level, *flags.levels);
  }
  if (flags.conv_start) config.architecture.conv_start_level = *flags.conv_start;
  if (flags.target_class) config.explain.target_class = *flags.target_class;
  if (flags.top_k) config.explain.top_k = *flags.top_k;
  if (!flags.partition.empty()) config.explain.partition = flags.partition;
  config.validate();
  return config;
}

// Fail-fast checks on every input the command will touch.
void check_inputs(const RunConfig& c, bool needs_data) {
  require_file(c.graph.edges, "edge list");
  require_file(c.graph.hierarchy, "hierarchy");
  if (!c.graph.edges && !c.graph.hierarchy && !c.data.synthetic) {
    throw ConfigError("graph: need edges, a hierarchy, or a synthetic data section");
  }
  if (!needs_data) return;
  require_file(c.data.expression, "expression matrix");
  require_file(c.data.labels, "labels");
  require_file(c.data.mapping, "mapping");
  if (!c.data.expression && !c.data.synthetic) throw ConfigError("data: need an expression file or a synthetic section");
}

struct Pipeline {
  std::shared_ptr<const CoarseningHierarchy> hierarchy;
  ExpressionDataset dataset;
  std::optional<AlignmentReport> alignment;
  std::vector<std::string> dropped_components;
};

std::shared_ptr<const GeneGraph> load_graph(const RunConfig& c, std::vector<std::string>& dropped, std::ostream& err) {
  if (c.graph.edges) {
    auto load = load_edge_list(*c.graph.edges, c.graph.min_weight);
    auto split = largest_component(load.graph);
    if (!split.dropped_ids.empty()) {
      err << "warning: dropped " << split.dropped_ids.size() << " node(s) outside the largest component\n";
    }
    dropped = std::move(split.dropped_ids);
    return std::make_shared<const GeneGraph>(std::move(split.graph));
  }
  return std::make_shared<const GeneGraph>(synth_generate(*c.data.synthetic).graph);
}

std::shared_ptr<const CoarseningHierarchy> load_or_build_hierarchy(const RunConfig& c, Pipeline& p,
                                                                   std::ostream& err) {
  if (c.graph.hierarchy) return std::make_shared<const CoarseningHierarchy>(load_hierarchy(*c.graph.hierarchy));
  auto g = load_graph(c, p.dropped_components, err);
  return std::make_shared<const CoarseningHierarchy>(build_hierarchy(g, c.coarsen.levels, c.seed));
}

Pipeline prepare(RunConfig& c, std::ostream& err) {
  Pipeline p;
  p.hierarchy = load_or_build_hierarchy(c, p, err);
  if (static_cast<std::size_t>(c.architecture.n_levels) > p.hierarchy->depth()) {
    throw ConfigError("architecture: levels (" + std::to_string(c.architecture.n_levels) +
                      ") exceeds the hierarchy depth (" + std::to_string(p.hierarchy->depth()) + ")");
  }
  ExpressionDataset raw;
  std::vector<std::pair<std::string, std::string>> mapping;
  if (c.data.expression) {
    raw = load_expression(*c.data.expression, c.data.orientation, c.data.labels);
    raw = filter_missing(raw, c.data.missing_threshold);
    if (c.data.log_transform) raw = log_transform(raw);
    if (c.data.mapping) mapping = load_mapping(*c.data.mapping);
  } else {
    raw = synth_generate(*c.data.synthetic).dataset;
    if (c.data.log_transform) raw = log_transform(raw);
  }
  auto aligned = align_to_graph(raw, p.hierarchy->original(), mapping);
  p.dataset = std::move(aligned.dataset);
  p.alignment = std::move(aligned.report);
  if (!p.dataset.labeled()) throw LabelError("the dataset has no labels");
  const std::size_t classes = p.dataset.label_names.size();
  if (c.architecture.head == HeadKind::kBinary && classes != 2) {
    throw ConfigError("architecture: the binary head needs exactly 2 classes, the labels have " +
                      std::to_string(classes));
  }
  c.architecture.n_classes = classes;
  return p;
}

std::vector<std::size_t> partition_of(const Split& split, const std::string& name, std::size_t n) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  return all;
}

void write_edge_list(const GeneGraph& g, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "gene_a\tgene_b\tweight\n";
  for (const Edge& e : g.edges()) out << g.id(e.u) << '\t' << g.id(e.v) << '\t' << tsv::format_double(e.weight) << '\n';
}

GnnModel checkpoint_model(const Flags& flags, const Pipeline& p) {
  if (flags.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::is_regular_file(flags.checkpoint)) throw IoError("checkpoint not found: " + flags.checkpoint);
  return load_checkpoint(flags.checkpoint, p.hierarchy, flags.force);
}

// --- commands ---------------------------------------------------------------

int cmd_coarsen(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(flags, true);
  check_inputs(c, false);
  OutputDir dir(flags.out);
  Pipeline p;
  p.hierarchy = load_or_build_hierarchy(c, p, err);
  const auto& h = *p.hierarchy;
  save_hierarchy(h, dir.path("hierarchy.json"));
  h.write_membership_tsv(dir.path("membership.tsv"));
  ojson summary;
  summary["digest"] = hex64(h.digest());
  summary["levels"] = ojson::array();
  for (std::size_t l = 0; l < h.depth(); ++l) {
    const auto sizes = h.level(l).assignment.cluster_sizes();
    const auto singletons = static_cast<std::size_t>(std::count(sizes.begin(), sizes.end(), std::size_t{1}));
    summary["levels"].push_back({{"level", l},
                                 {"n_fine", h.size_at(l)},
                                 {"n_coarse", h.size_at(l + 1)},
                                 {"singletons", singletons},
                                 {"edges", h.graph_at(l + 1)->n_edges()}});
  }
  summary["final_supernodes"] = h.size_at(h.depth());
  summary["dropped_nodes"] = p.dropped_components;
  dir.write_json("coarsen_summary.json", summary);
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("coarsen", c);
  out << ojson{{"final_supernodes", h.size_at(h.depth())}, {"digest", hex64(h.digest())}}.dump() << "\n";
  return 0;
}

int cmd_train(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(flags, true);
  check_inputs(c, true);
  OutputDir dir(flags.out);
  Pipeline p = prepare(c, err);
  const Split split = stratified_split(p.dataset.labels, c.train.split, c.seed);
  GnnModel model(c.architecture, p.hierarchy, c.seed);
  const TrainHistory history = fit(model, p.dataset, split, c.train);

  save_hierarchy(*p.hierarchy, dir.path("hierarchy.json"));
  save_checkpoint(model, dir.path("checkpoint.json"));
  history.write_csv(dir.path("history.csv"));
  dir.write_json("split.json", split.to_json());
  dir.write_json("alignment.json", p.alignment->to_json());
  ojson metrics;
  metrics["best_epoch"] = history.best_epoch;
  metrics["epochs_run"] = history.epochs.size();
  metrics["stopped_early"] = history.stopped_early;
  metrics["param_count"] = model.param_count();
  metrics["baseline_param_count"] =
      baseline_param_count(model.input_size(), c.architecture.hidden_units, c.architecture.n_outputs());
  if (!split.val.empty()) metrics["val"] = evaluate(model, p.dataset, split.val).to_json(p.dataset.label_names);
  if (!split.test.empty()) {
    const auto report = evaluate(model, p.dataset, split.test);
    metrics["test"] = report.to_json(p.dataset.label_names);
    report.write_confusion_csv(dir.path("confusion_test.csv"), p.dataset.label_names);
  }
  dir.write_json("metrics.json", metrics);
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("train", c);
  ojson summary{{"best_epoch", history.best_epoch}, {"param_count", model.param_count()}};
  if (metrics.contains("test")) summary["test_f1_macro"] = metrics["test"]["f1_macro"];
  out << summary.dump() << "\n";
  return 0;
}

int cmd_evaluate(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(flags, true);
  check_inputs(c, true);
  if (flags.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  OutputDir dir(flags.out);
  Pipeline p = prepare(c, err);
  const GnnModel model = checkpoint_model(flags, p);
  const Split split = stratified_split(p.dataset.labels, c.train.split, c.seed);
  const std::string name = flags.partition.empty() ? "test" : flags.partition;
  const auto rows = partition_of(split, name, p.dataset.n_samples());
  const auto report = evaluate(model, p.dataset, rows);
  ojson metrics = report.to_json(p.dataset.label_names);
  metrics["partition"] = name;
  dir.write_json("metrics.json", metrics);
  report.write_confusion_csv(dir.path("confusion.csv"), p.dataset.label_names);
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("evaluate", c);
  out << ojson{{"partition", name}, {"f1_macro", report.f1_macro}, {"accuracy", report.accuracy}}.dump() << "\n";
  return 0;
}

struct Explanation {
  SaliencyReport input;
  SupernodeSaliency supernode;
  std::vector<RankedFeature> input_ranking;
  std::vector<RankedFeature> supernode_ranking;
};

Explanation explain_model(const RunConfig& c, const GnnModel& model, const Pipeline& p) {
  const Split split = stratified_split(p.dataset.labels, c.train.split, c.seed);
  const auto rows = partition_of(split, c.explain.partition, p.dataset.n_samples());
  if (rows.empty()) throw ConfigError("explain: partition '" + c.explain.partition + "' is empty");
  std::vector<std::string> ids;
  for (std::size_t r : rows) ids.push_back(p.dataset.sample_ids[r]);
  const Tensor x = p.dataset.rows(rows);
  Explanation e;
  e.input = input_saliency(model, x, ids, c.explain.target_class, c.explain.threads);
  e.supernode = supernode_saliency(model, x, ids, c.explain.target_class, c.explain.reduction, c.explain.threads);
  e.input_ranking = rank_features(e.input);
  e.supernode_ranking = rank_features(e.supernode.reduced);
  return e;
}

int cmd_explain(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(flags, true);
  check_inputs(c, true);
  if (flags.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  OutputDir dir(flags.out);
  Pipeline p = prepare(c, err);
  const GnnModel model = checkpoint_model(flags, p);
  const Explanation e = explain_model(c, model, p);
  e.input.write_csv(dir.path("input_saliency.csv"));
  write_ranking_tsv(e.input_ranking, dir.path("input_ranking.tsv"), c.explain.top_k);
  e.supernode.reduced.write_csv(dir.path("supernode_saliency.csv"));
  write_ranking_tsv(e.supernode_ranking, dir.path("supernode_ranking.tsv"), c.explain.top_k);
  {
    std::ofstream raw(dir.path("supernode_raw.csv"));
    raw << "sample_id,supernode,channel,raw\n";
    const std::size_t nodes = model.embedding_nodes();
    const std::size_t channels = model.embedding_channels();
    for (std::size_t s = 0; s < e.input.n_samples(); ++s) {
      for (std::size_t j = 0; j < nodes; ++j) {
        for (std::size_t f = 0; f < channels; ++f) {
          raw << e.input.sample_ids[s] << ',' << e.supernode.reduced.feature_ids[j] << ',' << f << ','
              << tsv::format_double(e.supernode.raw.at(s, j, f)) << '\n';
        }
      }
    }
  }
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("explain", c);
  ojson summary;
  summary["samples"] = e.input.n_samples();
  summary["supernode_shape"] = e.supernode.raw.shape();
  summary["top_genes"] = ojson::array();
  for (std::size_t i = 0; i < std::min(c.explain.top_k, e.input_ranking.size()); ++i) {
    summary["top_genes"].push_back(e.input_ranking[i].feature_id);
  }
  out << summary.dump() << "\n";
  return 0;
}

int cmd_enrich(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(flags, true);
  check_inputs(c, true);
  if (!c.enrich.gmt) throw ConfigError("enrich: a gmt file is required");
  require_file(c.enrich.gmt, "gene-set file");
  if (flags.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  OutputDir dir(flags.out);
  Pipeline p = prepare(c, err);
  const GnnModel model = checkpoint_model(flags, p);
  const GeneSetCollection sets = load_gmt(*c.enrich.gmt);
  const Explanation e = explain_model(c, model, p);
  const auto& universe = p.hierarchy->original().node_ids();
  const int levels = model.config().n_levels;

  std::ofstream clusters(dir.path("clusters.tsv"));
  clusters << "rank\tsupernode\tgene_id\n";
  ojson summary = ojson::array();
  const std::size_t n = std::min(c.enrich.top_supernodes, e.supernode_ranking.size());
  for (std::size_t r = 0; r < n; ++r) {
    const auto& ranked = e.supernode_ranking[r];
    std::vector<std::string> genes;
    if (levels == 0) {
      genes = {universe[ranked.feature]};
    } else {
      genes = p.hierarchy->expand_cluster(static_cast<std::size_t>(levels - 1), ranked.feature);
    }
    for (const auto& g : genes) clusters << (r + 1) << '\t' << ranked.feature_id << '\t' << g << '\n';
    const auto results = ora(genes, sets, universe);
    const std::string file = "ora_rank" + std::to_string(r + 1) + ".tsv";
    write_ora_tsv(results, dir.path(file));
    ojson item{{"rank", r + 1},
               {"supernode", ranked.feature_id},
               {"mean_saliency", ranked.mean_saliency},
               {"cluster_size", genes.size()},
               {"file", file}};
    if (!results.empty()) {
      item["top_set"] = results.front().set_id;
      item["top_fdr"] = results.front().fdr;
    }
    summary.push_back(item);
  }
  clusters.close();
  dir.write_json("enrich_summary.json", summary);
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("enrich", c);
  out << summary.dump() << "\n";
  return 0;
}

int cmd_synth(const Flags& flags, std::ostream& out, std::ostream&) {
  RunConfig c = resolve_config(flags, false);
  if (!c.data.synthetic) {
    c.data.synthetic = SyntheticSpec{};
    c.data.synthetic->seed = c.seed;
  }
  OutputDir dir(flags.out);
  const SyntheticData data = synth_generate(*c.data.synthetic);
  write_edge_list(data.graph, dir.path("edges.tsv"));
  write_expression_tsv(data.dataset, dir.path("expression.tsv"), Orientation::kGenesAsRows);
  write_labels_tsv(data.dataset, dir.path("labels.tsv"));
  {
    std::ofstream modules(dir.path("modules.tsv"));
    modules << "module\tgene_id\n";
    for (std::size_t m = 0; m < data.modules.size(); ++m) {
      for (const auto& g : data.modules[m]) modules << m << '\t' << g << '\n';
    }
  }
  // A ready-to-use config for the files just written.
  RunConfig next = c;
  const fs::path base = fs::absolute(dir.dir());
  next.graph.edges = (base / "edges.tsv").lexically_normal();
  next.graph.hierarchy.reset();
  next.data.expression = (base / "expression.tsv").lexically_normal();
  next.data.labels = (base / "labels.tsv").lexically_normal();
  next.data.orientation = Orientation::kGenesAsRows;
  next.data.synthetic.reset();
  dir.write_json("run_config.json", run_config_to_json(next));
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("synth", c);
  out << ojson{{"nodes", data.graph.n_nodes()},
               {"edges", data.graph.n_edges()},
               {"samples", data.dataset.n_samples()},
               {"planted_genes", data.planted_genes().size()}}
             .dump()
      << "\n";
  return 0;
}

ojson grad_entry(const std::string& name, const ad::GradCheckResult& r) {
  return {{"name", name}, {"max_rel_error", r.max_rel_error}, {"checked", r.checked}, {"skipped", r.skipped.size()}};
}

// Gradient checks of the full model on a 12-node, 2-level configuration.
int cmd_selftest(const Flags& flags, std::ostream& out, std::ostream&) {
  const std::uint64_t seed = flags.seed.value_or(0);
  constexpr double kTolerance = 1e-4;
  ojson checks = ojson::array();
  bool passed = true;
  for (HeadKind head : {HeadKind::kBinary, HeadKind::kMulticlass}) {
    auto graph = std::make_shared<const GeneGraph>(random_connected_graph(12, 8, hash64(seed, 1), "n"));
    auto hierarchy = std::make_shared<const CoarseningHierarchy>(build_hierarchy(graph, 2, seed));
    ArchitectureConfig arch;
    arch.n_levels = 2;
    arch.conv_start_level = 0;
    arch.hidden_units = 6;
    arch.head = head;
    arch.n_classes = head == HeadKind::kBinary ? 2 : 3;
    arch.dropout_p = 0.0;
    const GnnModel model(arch, hierarchy, seed);
    Rng rng(hash64(seed, 2));
    const std::size_t batch = 4;
    Tensor x({batch, 12});
    for (double& v : x.storage()) v = rng.normal();
    std::vector<int> labels(batch);
    for (std::size_t b = 0; b < batch; ++b) labels[b] = static_cast<int>(b % arch.n_classes);

    const std::string prefix = head == HeadKind::kBinary ? "binary/" : "multiclass/";
    for (bool train_mode : {false, true}) {
      GnnModel::ForwardOptions opts;
      opts.train = train_mode;
      opts.dropout_seed = hash64(seed, 3);
      const std::string tag = prefix + (train_mode ? "train/" : "eval/");
      auto loss_with = [&](ad::Tape& tape, std::optional<std::size_t> param, ad::Var v, ad::Var xv) {
        auto params = model.bind(tape, false);
        if (param) params[*param] = v;
        const auto o = model.forward(tape, params, xv, opts);
        return cross_entropy(o.logits, labels, {}, head);
      };
      const auto input = ad::grad_check(
          [&](ad::Tape& t, ad::Var v) { return loss_with(t, std::nullopt, v, v); }, x);
      checks.push_back(grad_entry(tag + "input", input));
      passed = passed && input.max_rel_error <= kTolerance;
      for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        const std::string& name = model.parameters()[i].name;
        if (train_mode && name == "fc1.bias") {
          // Batch statistics cancel a shift before normalization, so this
          // direction is exactly flat and only its magnitude is checked.
          ad::Tape tape;
          const ad::Var v = tape.leaf(model.parameters()[i].value, true);
          const auto grads = tape.backward(loss_with(tape, i, v, tape.leaf(x)));
          double largest = 0.0;
          for (double g : grads[v].values()) largest = std::max(largest, std::abs(g));
          checks.push_back({{"name", tag + name}, {"max_abs_gradient", largest}});
          passed = passed && largest <= 1e-12;
          continue;
        }
        const auto r = ad::grad_check(
            [&](ad::Tape& t, ad::Var v) { return loss_with(t, i, v, t.leaf(x)); }, model.parameters()[i].value);
        checks.push_back(grad_entry(tag + name, r));
        passed = passed && r.max_rel_error <= kTolerance;
      }
    }
  }
  ojson report{{"tolerance", kTolerance}, {"passed", passed}, {"checks", checks}};
  if (!flags.out.empty() && flags.out != "out") {
    OutputDir dir(flags.out);
    dir.write_json("selftest.json", report);
  }
  out << report.dump(2) << "\n";
  return passed ? 0 : 2;
}

int cmd_ablate(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(flags, true);
  check_inputs(c, true);
  SweepKind kind;
  if (flags.sweep == "conv-start") {
    kind = SweepKind::kConvStart;
  } else if (flags.sweep == "levels") {
    kind = SweepKind::kLevels;
  } else {
    throw ConfigError("--sweep must be 'conv-start' or 'levels'");
  }
  OutputDir dir(flags.out);
  Pipeline p = prepare(c, err);
  const Split split = stratified_split(p.dataset.labels, c.train.split, c.seed);
  const auto rows = ablation_sweep(p.hierarchy, p.dataset, split, c.architecture, c.train, kind, c.seed);
  write_ablation_tsv(rows, dir.path("ablation.tsv"));
  dir.write_json("resolved_config.json", run_config_to_json(c));
  dir.write_manifest("ablate", c);
  std::ifstream table(dir.dir() / "ablation.tsv");
  out << table.rdbuf();
  return 0;
}

}  // namespace

ojson version_json() {
  ojson v;
  v["version"] = kVersion;
  v["formats"] = {{"hierarchy", 1}, {"checkpoint", 1}, {"run_config", kRunConfigFormat}, {"manifest", kManifestFormat}};
  return v;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical graph pooling networks for gene expression"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print format versions as JSON");
  Flags flags;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", flags.config, "Run configuration JSON");
    if (config_required) opt->required();
    sub->add_option("--out", flags.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", flags.seed, "Seed for every random choice");
  };
  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--levels", flags.levels, "Coarsening levels (and model depth)");
    sub->add_option("--conv-start", flags.conv_start, "First level with a graph convolution");
  };
  auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", flags.checkpoint, "Trained model checkpoint")->required();
    sub->add_flag("--force", flags.force, "Accept a checkpoint built on a different hierarchy");
  };

  auto* coarsen = app.add_subcommand("coarsen", "Build the heavy-edge matching hierarchy");
  add_common(coarsen, true);
  coarsen->add_option("--levels", flags.levels, "Coarsening levels");
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, true);
  add_model_flags(train);
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a data partition");
  add_common(evaluate_cmd, true);
  add_model_flags(evaluate_cmd);
  add_checkpoint(evaluate_cmd);
  evaluate_cmd->add_option("--partition", flags.partition, "train, val, test or all");
  auto* explain = app.add_subcommand("explain", "Gene and supernode saliency");
  add_common(explain, true);
  add_model_flags(explain);
  add_checkpoint(explain);
  explain->add_option("--class", flags.target_class, "Target class index");
  explain->add_option("--top-k", flags.top_k, "Rows in the ranking exports");
  explain->add_option("--partition", flags.partition, "train, val, test or all");
  auto* enrich = app.add_subcommand("enrich", "Over-representation analysis of top supernodes");
  add_common(enrich, true);
  add_model_flags(enrich);
  add_checkpoint(enrich);
  enrich->add_option("--class", flags.target_class, "Target class index");
  auto* synth = app.add_subcommand("synth", "Write a planted-module benchmark");
  add_common(synth, false);
  auto* selftest = app.add_subcommand("selftest", "Gradient checks on a small model");
  selftest->add_option("--out", flags.out, "Output directory for selftest.json");
  selftest->add_option("--seed", flags.seed, "Seed");
  auto* ablate = app.add_subcommand("ablate", "Sweep conv_start_level or the level count");
  add_common(ablate, true);
  add_model_flags(ablate);
  ablate->add_option("--sweep", flags.sweep, "conv-start or levels")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (version) {
      out << version_json().dump(2) << "\n";
      return 0;
    }
    if (coarsen->parsed()) return cmd_coarsen(flags, out, err);
    if (train->parsed()) return cmd_train(flags, out, err);
    if (evaluate_cmd->parsed()) return cmd_evaluate(flags, out, err);
    if (explain->parsed()) return cmd_explain(flags, out, err);
    if (enrich->parsed()) return cmd_enrich(flags, out, err);
    if (synth->parsed()) return cmd_synth(flags, out, err);
    if (selftest->parsed()) return cmd_selftest(flags, out, err);
    if (ablate->parsed()) return cmd_ablate(flags, out, err);
    err << app.help();
    return 1;
  } catch (const UserError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace hgp::cli
