#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fergcn/autodiff.hpp"
#include "fergcn/optim.hpp"

namespace fergcn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so entries whose true gradient
  // is zero are judged on absolute error instead.
  double denominator_floor = 1e-6;
};

struct ParamGradReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  std::vector<ParamGradReport> params;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Builds a scalar loss on the given tape, reading parameters through
/// Tape::parameter().
using LossBuilder = std::function<Var(Tape&)>;

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Compares the tape's analytic gradients against central differences for
/// every entry of every parameter. Parameters are restored afterwards and
/// their gradient buffers are left zeroed.
GradCheckReport check_gradients(const LossBuilder& build, const ParameterSet& params,
                                const GradCheckOptions& options = {});

/// Central-difference gradient of `build` with respect to one tensor, using
/// inference tapes only.
Tensor numeric_gradient(const LossBuilder& build, Tensor& wrt, double step = 1e-5);

}  // namespace fergcn
