#include "hgp/metrics.hpp"

#include <fstream>

#include "hgp/error.hpp"

namespace hgp {

EvalReport compute_report(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes) {
  if (truth.empty()) throw ContractError("evaluation on an empty partition");
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction counts differ");
  if (n_classes == 0) throw ContractError("n_classes must be positive");

  EvalReport r;
  r.n_classes = n_classes;
  r.n_samples = truth.size();
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_classes || static_cast<std::size_t>(p) >= n_classes) {
      throw LabelError("class index outside [0, " + std::to_string(n_classes) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    if (t == p) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_samples);

  r.per_class.resize(n_classes);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t tp = r.confusion[c][c];
    std::size_t predicted_c = 0;
    std::size_t actual_c = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      predicted_c += r.confusion[k][c];
      actual_c += r.confusion[c][k];
    }
    ClassMetrics& m = r.per_class[c];
    m.support = actual_c;
    m.precision_undefined = predicted_c == 0;
    m.recall_undefined = actual_c == 0;
    m.precision = predicted_c ? static_cast<double>(tp) / static_cast<double>(predicted_c) : 0.0;
    m.recall = actual_c ? static_cast<double>(tp) / static_cast<double>(actual_c) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    f1_sum += m.f1;
  }
  r.f1_macro = f1_sum / static_cast<double>(n_classes);
  return r;
}

namespace {

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::ordered_json j;
  j["n_samples"] = n_samples;
  j["accuracy"] = accuracy;
  j["f1_macro"] = f1_macro;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    nlohmann::ordered_json item;
    item["class"] = class_name(class_names, c);
    item["precision"] = m.precision;
    item["recall"] = m.recall;
    item["f1"] = m.f1;
    item["support"] = m.support;
    item["precision_undefined"] = m.precision_undefined;
    item["recall_undefined"] = m.recall_undefined;
    classes.push_back(std::move(item));
  }
  j["per_class"] = std::move(classes);
  j["confusion"] = confusion;
  return j;
}

void EvalReport::write_confusion_csv(const std::filesystem::path& path,
                                     const std::vector<std::string>& class_names) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "true\\predicted";
  for (std::size_t c = 0; c < n_classes; ++c) out << ',' << class_name(class_names, c);
  out << '\n';
  for (std::size_t t = 0; t < n_classes; ++t) {
    out << class_name(class_names, t);
    for (std::size_t p = 0; p < n_classes; ++p) out << ',' << confusion[t][p];
    out << '\n';
  }
}

}  // namespace hgp
