#include "fsnt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fsnt {

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<ag::Var()>& f,
                           ag::ParameterSet& params, double tolerance) {
  params.zero_grad();
  f().backward();
  std::vector<Tensor> analytic;
  for (const auto& [name, var] : params) analytic.push_back(var.grad());

  GradCheckReport report;
  report.tolerance = tolerance;
  ag::NoGradGuard no_grad;
  std::size_t i = 0;
  for (auto& [name, var] : params) {
    GradCheckEntry entry{name, 0.0, 0.0};
    Tensor& p = var.mutable_value();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double saved = p[j];
      p[j] = saved + kGradCheckStep;
      const double up = f().value()[0];
      p[j] = saved - kGradCheckStep;
      const double down = f().value()[0];
      p[j] = saved;
      const double numeric = (up - down) / (2.0 * kGradCheckStep);
      const double a = analytic[i][j];
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, grad_rel_error(a, numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
    ++i;
  }
  return report;
}

}  // namespace fsnt
