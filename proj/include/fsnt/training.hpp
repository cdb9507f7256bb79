#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnt/clock.hpp"
#include "fsnt/metrics.hpp"
#include "fsnt/model.hpp"

namespace fsnt {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 20;
  std::size_t steps_per_epoch = 64;
  std::size_t patience = 5;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::string monitor = "eval_loss";  // the only supported monitor
  double threshold = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double eval_loss = 0.0;
  MetricsReport eval_metrics;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

// Patience rule on a minimized monitor: an epoch improves iff its value is
// strictly below the best so far. Training stops once `patience`
// consecutive epochs fail to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when this epoch is the new best.
  bool observe(double value);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 if none
  double best_value() const { return best_; }
  std::size_t epochs_seen() const { return seen_; }

 private:
  std::size_t patience_;
  std::size_t seen_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
};

// Deterministic batch sampler: walks a seeded permutation of the training
// windows and reshuffles whenever it runs out.
class BatchSampler {
 public:
  BatchSampler(std::size_t population, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  void reshuffle();
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

struct TrainHooks {
  // Called after every epoch with the live model (before any restore).
  std::function<void(const EpochLog&, const Classifier&)> on_epoch;
  // Replaces the monitored value for an epoch (scripted-monitor tests).
  std::function<double(const EpochLog&)> monitor_override;
  Clock* clock = nullptr;  // defaults to the real clock
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 1-based index into epochs
  bool stopped_early = false;
  std::int64_t optimizer_steps = 0;
  std::vector<double> step_seconds;  // one per optimizer step
};

// Adam on mean BCE; steps_per_epoch batches per epoch; eval after every
// epoch; early stopping on the eval loss; parameters end at the best epoch.
TrainResult train(Classifier& model, const WindowSet& train_windows,
                  const WindowSet& eval_windows, const TrainConfig& config,
                  const TrainHooks& hooks = {});

struct Evaluation {
  MetricsReport report;
  double loss = 0.0;
  std::vector<double> probabilities;
  std::vector<int> predictions;
};

// p >= threshold classifies as attack.
Evaluation evaluate_full(const Classifier& model, const WindowSet& windows, double threshold);
MetricsReport evaluate(const Classifier& model, const WindowSet& windows, double threshold);

}  // namespace fsnt
