#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fsnt/autograd.hpp"

namespace fsnt {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

// Relative error used throughout: |a - n| / max(|a|, |n|, floor). The floor
// keeps gradients that are zero up to round-off from reading as 100% error.
inline constexpr double kGradCheckFloor = 1e-5;
inline constexpr double kGradCheckStep = 1e-5;

double grad_rel_error(double analytic, double numeric);

// Compares the reverse-mode gradient of `f` against central finite
// differences (step h = 1e-5) for every element of every parameter.
// `f` must rebuild its graph from the current parameter values on each call.
GradCheckReport grad_check(const std::function<ag::Var()>& f,
                           ag::ParameterSet& params, double tolerance);

}  // namespace fsnt
