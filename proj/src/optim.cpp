#include "fsnt/optim.hpp"

#include <cmath>

#include "fsnt/errors.hpp"

namespace fsnt {

void Adam::step(ag::ParameterSet& params) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& [name, var] : params) grads.push_back(var.grad());
  step(params, grads);
}

void Adam::step(ag::ParameterSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam: got " + std::to_string(grads.size()) +
                     " gradients for " + std::to_string(params.size()) + " parameters");
  }
  if (m_.empty()) {
    for (const auto& [name, var] : params) {
      m_.emplace_back(var.shape(), 0.0);
      v_.emplace_back(var.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter set changed");

  ++t_;
  const auto [lr, b1, b2, eps] = options_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& [name, var] : params) {
    const Tensor& g = grads[i];
    if (g.shape() != var.shape()) {
      throw ShapeError("adam: gradient shape " + shape_str(g.shape()) +
                       " does not match parameter " + name);
    }
    Tensor& p = var.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
    ++i;
  }
}

}  // namespace fsnt
