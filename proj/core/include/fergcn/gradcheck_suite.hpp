#pragma once

// Finite-difference suites over the operations, the modules and the full
// model. Used by the `gradcheck` command and the acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "fergcn/gradcheck.hpp"

namespace fergcn {

enum class GradScope { kOps, kModule, kEndToEnd, kStopGradient, kAll };

/// "ops", "module", "end_to_end", "stop_gradient" or "all".
GradScope parse_grad_scope(const std::string& text);
std::string grad_scope_name(GradScope scope);

struct SuiteGroup {
  std::string suite;  // e.g. "ops", "module/gcn"
  std::string group;  // op or parameter name
  double max_rel_error = 0.0;
  std::size_t instances = 0;
  bool passed = false;
};

struct SuiteReport {
  std::vector<SuiteGroup> groups;
  // Differentiable ops that no instance of the ops suite exercised.
  std::vector<std::string> uncovered_ops;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct SuiteOptions {
  std::uint64_t seed = 7;
  std::size_t instances_per_op = 20;
  std::size_t instances_per_module = 3;
  GradCheckOptions check;
};

SuiteReport run_gradcheck_suite(GradScope scope, const SuiteOptions& options = {});

/// One line per group plus a verdict line.
std::string format_suite_report(const SuiteReport& report);

}  // namespace fergcn
