#include "fsnt/metrics.hpp"

#include <fmt/format.h>

#include <sstream>

#include "fsnt/csv.hpp"
#include "fsnt/errors.hpp"

namespace fsnt {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::string format_real(double v) { return fmt::format("{}", v); }

ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw DataError("confusion: " + std::to_string(predictions.size()) +
                    " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DataError("confusion: no predictions");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool y = labels[i] != 0;
    if (p && y) ++c.tp;
    else if (!p && !y) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

MetricsReport derive(const ConfusionCounts& c) {
  if (c.total() == 0) throw DataError("derive: zero total count");
  MetricsReport r;
  r.counts = c;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.detection_rate = r.recall;
  r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  r.false_alarm_rate = ratio(c.fp, c.fp + c.tn);
  return r;
}

std::vector<std::vector<std::uint64_t>> confusion_matrix(const ConfusionCounts& c) {
  return {{c.tn, c.fp}, {c.fn, c.tp}};
}

nlohmann::json report_to_json(const MetricsReport& r) {
  return {
      {"counts", {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}},
      {"confusion_matrix",
       {{"rows", "actual (benign, attack)"},
        {"cols", "predicted (benign, attack)"},
        {"values", confusion_matrix(r.counts)}}},
      {"accuracy", r.accuracy},
      {"precision", r.precision},
      {"recall", r.recall},
      {"f1", r.f1},
      {"false_alarm_rate", r.false_alarm_rate},
      {"false_alarm_rate_percent", r.false_alarm_rate * 100.0},
      {"detection_rate", r.detection_rate},
  };
}

MetricsReport report_from_json(const nlohmann::json& doc) {
  try {
    MetricsReport r;
    const auto& c = doc.at("counts");
    r.counts = {c.at("tp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(),
                c.at("fp").get<std::uint64_t>(), c.at("fn").get<std::uint64_t>()};
    r.accuracy = doc.at("accuracy").get<double>();
    r.precision = doc.at("precision").get<double>();
    r.recall = doc.at("recall").get<double>();
    r.f1 = doc.at("f1").get<double>();
    r.false_alarm_rate = doc.at("false_alarm_rate").get<double>();
    r.detection_rate = doc.at("detection_rate").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics report: ") + e.what());
  }
}

std::vector<std::string> report_csv_header() {
  return {"tp", "tn", "fp", "fn", "accuracy", "precision", "recall", "f1",
          "false_alarm_rate", "false_alarm_rate_percent", "detection_rate"};
}

std::vector<std::string> report_csv_row(const MetricsReport& r) {
  return {std::to_string(r.counts.tp), std::to_string(r.counts.tn),
          std::to_string(r.counts.fp), std::to_string(r.counts.fn),
          format_real(r.accuracy),     format_real(r.precision),
          format_real(r.recall),       format_real(r.f1),
          format_real(r.false_alarm_rate), format_real(r.false_alarm_rate * 100.0),
          format_real(r.detection_rate)};
}

std::string render_reports_csv(std::span<const MetricsReport> reports) {
  std::ostringstream out;
  csv::write_row(out, report_csv_header());
  for (const auto& r : reports) csv::write_row(out, report_csv_row(r));
  return out.str();
}

std::vector<MetricsReport> parse_reports_csv(const std::string& text) {
  std::istringstream in(text);
  csv::Reader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields) || fields != report_csv_header()) {
    throw FormatError("metrics CSV: unexpected header");
  }
  std::vector<MetricsReport> out;
  while (reader.next(fields)) {
    if (fields.size() != report_csv_header().size()) throw FormatError("metrics CSV: short row");
    MetricsReport r;
    r.counts = {std::stoull(fields[0]), std::stoull(fields[1]), std::stoull(fields[2]),
                std::stoull(fields[3])};
    r.accuracy = std::stod(fields[4]);
    r.precision = std::stod(fields[5]);
    r.recall = std::stod(fields[6]);
    r.f1 = std::stod(fields[7]);
    r.false_alarm_rate = std::stod(fields[8]);
    r.detection_rate = std::stod(fields[10]);
    out.push_back(r);
  }
  return out;
}

std::string render_confusion_csv(const MetricsReport& r) {
  const auto m = confusion_matrix(r.counts);
  std::ostringstream out;
  csv::write_row(out, {"actual\\predicted", "benign", "attack"});
  csv::write_row(out, {"benign", std::to_string(m[0][0]), std::to_string(m[0][1])});
  csv::write_row(out, {"attack", std::to_string(m[1][0]), std::to_string(m[1][1])});
  return out.str();
}

}  // namespace fsnt
