#pragma once

#include <cstdint>
#include <vector>

#include "fsnt/autograd.hpp"

namespace fsnt {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are allocated on the first step and
// mirror the parameter shapes from then on.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Applies one update using the gradients currently held by `params`.
  void step(ag::ParameterSet& params);
  // Same, with explicit gradients (one per parameter, in set order).
  void step(ag::ParameterSet& params, const std::vector<Tensor>& grads);

  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace fsnt
