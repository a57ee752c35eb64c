#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace m2f {

struct MetricsReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<std::size_t> support;             // true count per class
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t total = 0;

  std::size_t n_classes() const { return confusion.size(); }
};

// Accuracy and support-weighted F1 from (truth, prediction) pairs. A class with
// no true and no predicted items gets F1 = 0. Throws std::invalid_argument on
// empty or mismatched inputs and std::out_of_range on labels outside [0, C).
MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes);

// Rebuilds every derived field from a confusion matrix.
MetricsReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

// Writes summary.txt, confusion.csv, per_class_f1.csv and metrics.json into
// `dir` (created if needed).
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);

std::string format_summary(const MetricsReport& report);
std::string metrics_json(const MetricsReport& report);
MetricsReport read_metrics_json(const std::filesystem::path& path);
std::vector<std::vector<std::size_t>> read_confusion_csv(const std::filesystem::path& path);

}  // namespace m2f
