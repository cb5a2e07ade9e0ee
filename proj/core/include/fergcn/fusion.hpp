#pragma once

#include <cstddef>
#include <string>

#include "fergcn/autodiff.hpp"
#include "fergcn/optim.hpp"
#include "fergcn/rng.hpp"

namespace fergcn {

/// Which axis of the adjacency is averaged before the softmax. kColumn takes
/// the mean of each column, so weight j summarises how strongly every frame
/// depends on frame j.
enum class FusionAxis { kColumn, kRow };

/// softmax(mean(A)) as a 1 x N row. The adjacency is detached first, so this
/// branch never contributes to dLoss/dA.
Var intensity_weights(Var adjacency, FusionAxis axis = FusionAxis::kColumn);

/// r = sum_i w_i H_i for 1 x N weights and N x d features.
Var weighted_fusion(Var features, Var weights);

struct ClassifierParams {
  Tensor weight;  // K x d
  Tensor bias;    // 1 x K

  static ClassifierParams init(std::size_t classes, std::size_t dim, CounterRng& rng);
  static ClassifierParams zeros(std::size_t classes, std::size_t dim);
  std::size_t classes() const { return weight.rows(); }
  void collect(ParameterSet& out, const std::string& prefix = "classifier.");
};

/// logits = r W^T + b, a 1 x K row.
Var classify(Tape& tape, Var fused, ClassifierParams& params);

}  // namespace fergcn
