#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fsnt {

// Positive class is attack (1).
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double false_alarm_rate = 0.0;
  double detection_rate = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> labels);

// f1 = 2TP / (2TP + FP + FN); any 0/0 ratio is reported as 0.
MetricsReport derive(const ConfusionCounts& counts);

// 2x2 grid, rows = actual (benign, attack), cols = predicted (benign, attack):
// [[TN, FP], [FN, TP]].
std::vector<std::vector<std::uint64_t>> confusion_matrix(const ConfusionCounts& counts);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& doc);

// CSV with a stable header; one row per report. Rates are fractions; the
// false alarm rate is repeated as a percentage in its own column.
std::vector<std::string> report_csv_header();
std::vector<std::string> report_csv_row(const MetricsReport& report);
std::string render_reports_csv(std::span<const MetricsReport> reports);
std::vector<MetricsReport> parse_reports_csv(const std::string& text);

// Labeled confusion matrix as CSV (actual \ predicted).
std::string render_confusion_csv(const MetricsReport& report);

// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

}  // namespace fsnt
