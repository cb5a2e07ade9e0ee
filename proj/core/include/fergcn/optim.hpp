#pragma once

#include <string>
#include <vector>

#include "fergcn/tensor.hpp"

namespace fergcn {

/// A learnable tensor together with a stable, human-readable name.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

using ParameterSet = std::vector<ParamRef>;

struct SgdConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.00005;

  void validate() const;
};

/// p <- p - lr * (grad(p) + weight_decay * p), then zeroes every gradient.
/// Throws StateError if any parameter has no gradient buffer.
void sgd_step(const ParameterSet& params, const SgdConfig& cfg);

void zero_grads(const ParameterSet& params);

}  // namespace fergcn
