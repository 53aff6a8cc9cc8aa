#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace hgp {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  // Zero denominators are reported as 0 with these flags set.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct EvalReport {
  std::size_t n_classes = 0;
  std::size_t n_samples = 0;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double f1_macro = 0.0;
  double accuracy = 0.0;

  nlohmann::ordered_json to_json(const std::vector<std::string>& class_names = {}) const;
  void write_confusion_csv(const std::filesystem::path& path, const std::vector<std::string>& class_names = {}) const;
};

// Throws ContractError on empty input or out-of-range labels.
EvalReport compute_report(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes);

}  // namespace hgp
