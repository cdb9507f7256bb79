#include "fsnt/bench.hpp"

#include <algorithm>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

#include "fsnt/csv.hpp"
#include "fsnt/errors.hpp"
#include "fsnt/lstm.hpp"
#include "fsnt/metrics.hpp"
#include "fsnt/optim.hpp"

namespace fsnt {

namespace {

std::mutex g_timed_section;

// Only one timed region may run per process; a concurrent attempt fails.
class TimedSection {
 public:
  TimedSection() : lock_(g_timed_section, std::try_to_lock) {
    if (!lock_.owns_lock()) throw Error("bench: another timed section is already running");
  }

 private:
  std::unique_lock<std::mutex> lock_;
};

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void BenchConfig::validate() const {
  if (batch_size < 1 || train_batches < 1 || inference_batches < 1) {
    throw ConfigError("bench: batch_size, train_batches and inference_batches must be >= 1");
  }
  if (inference_repeats < 2) throw ConfigError("bench: inference_repeats must be >= 2");
  if (!(outlier_factor > 0.0)) throw ConfigError("bench: outlier_factor must be > 0");
}

nlohmann::json BenchConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"warmup_batches", warmup_batches},
          {"train_batches", train_batches},
          {"inference_repeats", inference_repeats},
          {"inference_batches", inference_batches},
          {"outlier_factor", outlier_factor},
          {"seed", seed}};
}

BenchConfig BenchConfig::from_json(const nlohmann::json& doc) {
  BenchConfig c;
  try {
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.warmup_batches = doc.value("warmup_batches", c.warmup_batches);
    c.train_batches = doc.value("train_batches", c.train_batches);
    c.inference_repeats = doc.value("inference_repeats", c.inference_repeats);
    c.inference_batches = doc.value("inference_batches", c.inference_batches);
    c.outlier_factor = doc.value("outlier_factor", c.outlier_factor);
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bench config: ") + e.what());
  }
  c.validate();
  return c;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<std::size_t> outlier_scan(const std::vector<double>& timings, double factor) {
  if (timings.empty()) throw DataError("outlier_scan: no timings");
  const double limit = factor * median(timings);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < timings.size(); ++i) {
    if (timings[i] > limit) out.push_back(i);
  }
  return out;
}

ThroughputResult measure_train_throughput(const std::function<void(std::size_t)>& step,
                                          const BenchConfig& config, Clock& clock) {
  config.validate();
  TimedSection exclusive;
  for (std::size_t i = 0; i < config.warmup_batches; ++i) step(i);
  ThroughputResult r;
  for (std::size_t i = 0; i < config.train_batches; ++i) {
    const std::size_t batch = config.warmup_batches + i;
    const auto start = clock.now();
    step(batch);
    r.batch_seconds.push_back(clock.seconds_since(start));
    r.batch_indices.push_back(batch);
  }
  r.flows_per_sec = static_cast<double>(config.batch_size) / mean(r.batch_seconds);
  return r;
}

ThroughputResult measure_inference_throughput(const std::function<void(std::size_t)>& forward,
                                              std::size_t available_batches,
                                              const BenchConfig& config, Clock& clock) {
  config.validate();
  if (available_batches == 0) throw DataError("bench: no inference batches available");
  TimedSection exclusive;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, available_batches - 1);
  for (std::size_t i = 0; i < config.warmup_batches; ++i) forward(pick(rng));
  ThroughputResult r;
  for (std::size_t i = 0; i < config.inference_batches; ++i) {
    const std::size_t batch = pick(rng);
    std::vector<double> repeats;
    for (std::size_t k = 0; k < config.inference_repeats; ++k) {
      const auto start = clock.now();
      forward(batch);
      repeats.push_back(clock.seconds_since(start));
    }
    r.batch_seconds.push_back(median(repeats));
    r.repeat_seconds.push_back(std::move(repeats));
    r.batch_indices.push_back(batch);
  }
  r.flows_per_sec = static_cast<double>(config.batch_size) / mean(r.batch_seconds);
  return r;
}

namespace {

std::unique_ptr<Classifier> clone(const Classifier& model) {
  if (const auto* m = dynamic_cast<const Model*>(&model)) return std::make_unique<Model>(*m);
  if (const auto* l = dynamic_cast<const LstmModel*>(&model)) return std::make_unique<LstmModel>(*l);
  throw Error("bench: unsupported classifier type");
}

}  // namespace

BenchReport run_bench(const Classifier& model, const WindowSet& data, const BenchConfig& config,
                      Clock& clock) {
  config.validate();
  const std::size_t available = data.size() / config.batch_size;
  if (available < config.warmup_batches + config.train_batches) {
    throw DataError("bench: " + std::to_string(data.size()) + " windows give " +
                    std::to_string(available) + " batches of " +
                    std::to_string(config.batch_size) + "; need " +
                    std::to_string(config.warmup_batches + config.train_batches));
  }
  std::vector<Batch> batches;
  for (std::size_t b = 0; b < available; ++b) {
    std::vector<std::size_t> idx(config.batch_size);
    std::iota(idx.begin(), idx.end(), b * config.batch_size);
    batches.push_back(make_batch(data, idx));
  }

  std::unique_ptr<Classifier> trainee = clone(model);
  Adam optimizer;
  auto train_step = [&](std::size_t b) {
    trainee->params().zero_grad();
    ag::Var loss = batch_loss(*trainee, batches[b]);
    loss.backward();
    optimizer.step(trainee->params());
  };
  auto infer = [&](std::size_t b) {
    ag::NoGradGuard no_grad;
    ag::Var p = ag::sigmoid(model.logits(batches[b]));
    (void)p;
  };

  const ThroughputResult tr = measure_train_throughput(train_step, config, clock);
  const ThroughputResult ir = measure_inference_throughput(infer, available, config, clock);

  BenchReport report;
  report.batch_size = config.batch_size;
  report.train_flows_per_sec = tr.flows_per_sec;
  report.inference_flows_per_sec = ir.flows_per_sec;
  report.train_batch_seconds = tr.batch_seconds;
  report.inference_batch_seconds = ir.batch_seconds;
  report.inference_repeat_seconds = ir.repeat_seconds;
  report.outlier_batch_indices = outlier_scan(tr.batch_seconds, config.outlier_factor);
  return report;
}

nlohmann::json BenchReport::to_json() const {
  return {{"batch_size", batch_size},
          {"train_flows_per_sec", train_flows_per_sec},
          {"inference_flows_per_sec", inference_flows_per_sec},
          {"train_batch_seconds", train_batch_seconds},
          {"inference_batch_seconds", inference_batch_seconds},
          {"inference_repeat_seconds", inference_repeat_seconds},
          {"outlier_batch_indices", outlier_batch_indices}};
}

std::string BenchReport::to_csv() const {
  std::ostringstream out;
  csv::write_row(out, {"phase", "batch", "seconds", "flows_per_sec", "outlier"});
  for (std::size_t i = 0; i < train_batch_seconds.size(); ++i) {
    const bool outlier = std::find(outlier_batch_indices.begin(), outlier_batch_indices.end(), i) !=
                         outlier_batch_indices.end();
    csv::write_row(out, {"train", std::to_string(i), format_real(train_batch_seconds[i]),
                         format_real(static_cast<double>(batch_size) / train_batch_seconds[i]),
                         outlier ? "1" : "0"});
  }
  for (std::size_t i = 0; i < inference_batch_seconds.size(); ++i) {
    csv::write_row(out, {"inference", std::to_string(i), format_real(inference_batch_seconds[i]),
                         format_real(static_cast<double>(batch_size) / inference_batch_seconds[i]),
                         "0"});
  }
  return out.str();
}

}  // namespace fsnt
