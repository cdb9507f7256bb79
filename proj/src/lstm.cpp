#include "fsnt/lstm.hpp"

#include <cmath>
#include <random>

#include "fsnt/errors.hpp"

namespace fsnt {

namespace {

Tensor glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t({fan_in, fan_out});
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

LstmModel LstmModel::build(const LstmConfig& config, std::size_t feature_width) {
  if (config.hidden < 1 || config.window < 1 || feature_width < 1) {
    throw ConfigError("lstm: hidden size, window and feature width must be >= 1");
  }
  LstmModel m;
  m.config_ = config;
  m.width_ = feature_width;
  std::mt19937_64 rng(config.seed);
  const std::size_t h = config.hidden;
  m.params_.add("lstm.W", glorot(rng, feature_width, 4 * h));
  m.params_.add("lstm.U", glorot(rng, h, 4 * h));
  Tensor bias({4 * h}, 0.0);
  for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;
  m.params_.add("lstm.b", std::move(bias));
  m.params_.add("out.W", glorot(rng, h, 1));
  m.params_.add("out.b", Tensor({1}, 0.0));
  return m;
}

LstmModel::LstmModel(const LstmModel& other) : config_(other.config_), width_(other.width_) {
  for (const auto& [name, var] : other.params_) params_.add(name, var.value());
}

ag::Var LstmModel::logits(const Batch& batch) const {
  if (batch.features.cols() != width_ || batch.window != config_.window) {
    throw ShapeError("lstm: batch shape does not match the model");
  }
  const std::size_t h = config_.hidden;
  const std::size_t t_len = config_.window;
  const ag::Var& w = params_.at("lstm.W");
  const ag::Var& u = params_.at("lstm.U");
  const ag::Var& b = params_.at("lstm.b");
  const ag::Var x = ag::constant(batch.features);

  ag::Var hidden = ag::constant(Tensor({batch.size, h}, 0.0));
  ag::Var cell = ag::constant(Tensor({batch.size, h}, 0.0));
  std::vector<std::size_t> rows(batch.size);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t i = 0; i < batch.size; ++i) rows[i] = i * t_len + t;
    ag::Var z = ag::add_row_vector(
        ag::add(ag::matmul(ag::gather_rows(x, rows), w), ag::matmul(hidden, u)), b);
    ag::Var in_gate = ag::sigmoid(ag::slice_cols(z, 0, h));
    ag::Var forget_gate = ag::sigmoid(ag::slice_cols(z, h, h));
    ag::Var candidate = ag::tanh(ag::slice_cols(z, 2 * h, h));
    ag::Var out_gate = ag::sigmoid(ag::slice_cols(z, 3 * h, h));
    cell = ag::add(ag::mul(forget_gate, cell), ag::mul(in_gate, candidate));
    hidden = ag::mul(out_gate, ag::tanh(cell));
  }
  return ag::add_row_vector(ag::matmul(hidden, params_.at("out.W")), params_.at("out.b"));
}

}  // namespace fsnt
