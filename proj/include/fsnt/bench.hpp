#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnt/clock.hpp"
#include "fsnt/model.hpp"

namespace fsnt {

struct BenchConfig {
  std::size_t batch_size = 128;
  std::size_t warmup_batches = 3;
  std::size_t train_batches = 50;  // timed training steps
  std::size_t inference_repeats = 4;
  std::size_t inference_batches = 50;
  double outlier_factor = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static BenchConfig from_json(const nlohmann::json& doc);
};

struct ThroughputResult {
  double flows_per_sec = 0.0;
  // Training: seconds per timed step. Inference: median seconds per batch.
  std::vector<double> batch_seconds;
  // Inference only: raw repeat timings per selected batch.
  std::vector<std::vector<double>> repeat_seconds;
  std::vector<std::size_t> batch_indices;
};

// Untimed warmup steps, then `train_batches` timed steps.
// flows/sec = batch_size / mean(step seconds).
ThroughputResult measure_train_throughput(const std::function<void(std::size_t)>& step,
                                          const BenchConfig& config, Clock& clock);

// For each of `inference_batches` batches drawn (seeded) from
// [0, available_batches): time the forward pass `inference_repeats` times and
// keep the median. flows/sec = batch_size / mean(medians).
ThroughputResult measure_inference_throughput(const std::function<void(std::size_t)>& forward,
                                              std::size_t available_batches,
                                              const BenchConfig& config, Clock& clock);

double median(std::vector<double> values);

// Indices whose time exceeds factor * median(timings).
std::vector<std::size_t> outlier_scan(const std::vector<double>& timings, double factor);

struct BenchReport {
  std::size_t batch_size = 0;
  double train_flows_per_sec = 0.0;
  double inference_flows_per_sec = 0.0;
  std::vector<double> train_batch_seconds;
  std::vector<double> inference_batch_seconds;
  std::vector<std::vector<double>> inference_repeat_seconds;
  std::vector<std::size_t> outlier_batch_indices;

  nlohmann::json to_json() const;
  std::string to_csv() const;  // one row per timed batch
};

// Full protocol on a model: training steps (forward + backward + Adam) on a
// private copy of the parameters, inference on the model as given.
BenchReport run_bench(const Classifier& model, const WindowSet& data,
                      const BenchConfig& config, Clock& clock);

}  // namespace fsnt
