#include "fsnt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsnt/errors.hpp"
#include "fsnt/optim.hpp"

namespace fsnt {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size < 1 || max_epochs < 1 || steps_per_epoch < 1 || patience < 1 || repeats < 1) {
    throw ConfigError("train: batch_size, max_epochs, steps_per_epoch, patience and repeats must be >= 1");
  }
  if (patience > max_epochs) throw ConfigError("train: patience exceeds max_epochs");
  if (monitor != "eval_loss") throw ConfigError("train: unsupported monitor '" + monitor + "'");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train: threshold must lie in (0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"max_epochs", max_epochs},       {"steps_per_epoch", steps_per_epoch},
          {"patience", patience},           {"repeats", repeats},
          {"seed", seed},                   {"monitor", monitor},
          {"threshold", threshold}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  TrainConfig c;
  try {
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.max_epochs = doc.value("max_epochs", c.max_epochs);
    c.steps_per_epoch = doc.value("steps_per_epoch", c.steps_per_epoch);
    c.patience = doc.value("patience", c.patience);
    c.repeats = doc.value("repeats", c.repeats);
    c.seed = doc.value("seed", c.seed);
    c.monitor = doc.value("monitor", c.monitor);
    c.threshold = doc.value("threshold", c.threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", train_loss},
          {"eval_loss", eval_loss},
          {"eval_metrics", report_to_json(eval_metrics)},
          {"wall_seconds", wall_seconds}};
}

bool EarlyStopping::observe(double value) {
  ++seen_;
  if (best_epoch_ == 0 || value < best_) {
    best_ = value;
    best_epoch_ = seen_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

BatchSampler::BatchSampler(std::size_t population, std::uint64_t seed)
    : order_(population), rng_(seed) {
  if (population == 0) throw DataError("batch sampler: empty population");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == order_.size()) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

Evaluation evaluate_full(const Classifier& model, const WindowSet& windows, double threshold) {
  if (windows.empty()) throw DataError("evaluate: no windows");
  Evaluation ev;
  ev.probabilities = predict(model, windows);
  std::vector<int> labels(windows.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    labels[i] = windows.label(i);
    ev.predictions.push_back(ev.probabilities[i] >= threshold ? 1 : 0);
    loss += ag::bce_value(ev.probabilities[i], labels[i]);
  }
  ev.loss = loss / static_cast<double>(windows.size());
  ev.report = derive(confusion(ev.predictions, labels));
  return ev;
}

MetricsReport evaluate(const Classifier& model, const WindowSet& windows, double threshold) {
  return evaluate_full(model, windows, threshold).report;
}

TrainResult train(Classifier& model, const WindowSet& train_windows,
                  const WindowSet& eval_windows, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_windows.empty()) throw DataError("train: empty training split");
  if (eval_windows.empty()) throw DataError("train: empty evaluation split");
  if (train_windows.width() != model.feature_width() || train_windows.window() != model.window()) {
    throw ShapeError("train: windows do not match the model's feature width / window");
  }
  Clock& clock = hooks.clock ? *hooks.clock : default_clock();

  Adam optimizer(AdamOptions{config.learning_rate});
  BatchSampler sampler(train_windows.size(), config.seed);
  EarlyStopping stopper(config.patience);
  std::vector<Tensor> best_snapshot = model.params().snapshot();
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto epoch_start = clock.now();
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      const auto step_start = clock.now();
      const std::vector<std::size_t> idx = sampler.next(config.batch_size);
      model.params().zero_grad();
      ag::Var loss = batch_loss(model, make_batch(train_windows, idx));
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      }
      loss.backward();
      optimizer.step(model.params());
      loss_sum += value;
      result.step_seconds.push_back(clock.seconds_since(step_start));
    }

    Evaluation ev = evaluate_full(model, eval_windows, config.threshold);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(config.steps_per_epoch);
    log.eval_loss = ev.loss;
    log.eval_metrics = ev.report;
    log.wall_seconds = clock.seconds_since(epoch_start);
    if (hooks.on_epoch) hooks.on_epoch(log, model);

    const double monitored = hooks.monitor_override ? hooks.monitor_override(log) : log.eval_loss;
    if (stopper.observe(monitored)) best_snapshot = model.params().snapshot();
    result.epochs.push_back(std::move(log));
    if (stopper.should_stop()) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }

  model.params().restore(best_snapshot);
  result.best_epoch = stopper.best_epoch();
  result.optimizer_steps = optimizer.steps();
  return result;
}

}  // namespace fsnt
