#include "fergcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fergcn/errors.hpp"

namespace fergcn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossBuilder& build) {
  Tape tape(Tape::Mode::kInference);
  const Var loss = build(tape);
  if (loss.value().size() != 1) throw ShapeError("gradient check needs a scalar loss");
  return loss.value()[0];
}

}  // namespace

Tensor numeric_gradient(const LossBuilder& build, Tensor& wrt, double step) {
  Tensor out(wrt.shape());
  auto values = wrt.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double plus = evaluate(build);
    values[i] = saved - step;
    const double minus = evaluate(build);
    values[i] = saved;
    out[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

GradCheckReport check_gradients(const LossBuilder& build, const ParameterSet& params,
                                const GradCheckOptions& options) {
  zero_grads(params);
  {
    Tape tape;
    tape.backward(build(tape));
  }
  GradCheckReport report;
  for (const auto& p : params) {
    const std::vector<double> analytic(p.tensor->grad().begin(), p.tensor->grad().end());
    const Tensor numeric = numeric_gradient(build, *p.tensor, options.step);
    ParamGradReport entry{p.name, 0.0, 0.0, analytic.size()};
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      entry.max_rel_error =
          std::max(entry.max_rel_error, relative_error(analytic[i], numeric[i], options.denominator_floor));
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(analytic[i]));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  zero_grads(params);
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace fergcn
