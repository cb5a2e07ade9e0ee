#include "fergcn/optim.hpp"

#include "fergcn/errors.hpp"

namespace fergcn {

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

void sgd_step(const ParameterSet& params, const SgdConfig& cfg) {
  cfg.validate();
  for (const auto& p : params) {
    if (p.tensor == nullptr || !p.tensor->has_grad()) {
      throw StateError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
  }
  const double lr = cfg.learning_rate;
  const double wd = cfg.weight_decay;
  for (const auto& p : params) {
    auto values = p.tensor->values();
    auto grad = p.tensor->grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * (grad[i] + wd * values[i]);
    p.tensor->zero_grad();
  }
}

void zero_grads(const ParameterSet& params) {
  for (const auto& p : params) p.tensor->ensure_grad(), p.tensor->zero_grad();
}

}  // namespace fergcn
