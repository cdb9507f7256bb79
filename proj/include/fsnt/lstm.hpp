#pragma once

#include <cstdint>

#include "fsnt/model.hpp"

namespace fsnt {

struct LstmConfig {
  std::size_t hidden = 64;
  std::size_t window = kDefaultWindow;
  std::uint64_t seed = 0;
};

// Single-layer LSTM over the window; the final hidden state feeds a dense
// layer producing the logit. Gate order in the packed weights: input,
// forget, cell candidate, output.
class LstmModel final : public Classifier {
 public:
  // Glorot-uniform W/U, zero biases except the forget gate (1).
  static LstmModel build(const LstmConfig& config, std::size_t feature_width);

  LstmModel(const LstmModel& other);
  LstmModel(LstmModel&&) = default;

  const LstmConfig& config() const { return config_; }

  ag::Var logits(const Batch& batch) const override;
  ag::ParameterSet& params() override { return params_; }
  const ag::ParameterSet& params() const override { return params_; }
  std::size_t window() const override { return config_.window; }
  std::size_t feature_width() const override { return width_; }

 private:
  LstmModel() = default;

  LstmConfig config_;
  std::size_t width_ = 0;
  ag::ParameterSet params_;
};

}  // namespace fsnt
