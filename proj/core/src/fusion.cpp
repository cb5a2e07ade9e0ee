#include "fergcn/fusion.hpp"

#include <cmath>

#include "fergcn/errors.hpp"

namespace fergcn {

Var intensity_weights(Var adjacency, FusionAxis axis) {
  const Tensor& a = adjacency.value();
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw ShapeError("intensity_weights needs a square adjacency, got " + shape_to_string(a.shape()));
  }
  Var frozen = stop_gradient(adjacency);
  if (axis == FusionAxis::kRow) frozen = transpose(frozen);
  return softmax_vector(mean_over_rows(frozen));
}

Var weighted_fusion(Var features, Var weights) {
  const Tensor& h = features.value();
  const Tensor& w = weights.value();
  if (h.rank() != 2 || w.rank() != 2 || w.rows() != 1 || w.cols() != h.rows()) {
    throw ShapeError("weighted_fusion: weights " + shape_to_string(w.shape()) + " do not match features " +
                     shape_to_string(h.shape()));
  }
  return matmul(weights, features);
}

ClassifierParams ClassifierParams::zeros(std::size_t classes, std::size_t dim) {
  if (classes < 2) throw ConfigError("classifier needs at least two classes");
  return {Tensor({classes, dim}), Tensor({1, classes})};
}

ClassifierParams ClassifierParams::init(std::size_t classes, std::size_t dim, CounterRng& rng) {
  ClassifierParams p = zeros(classes, dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(classes + dim));
  for (auto& v : p.weight.values()) v = rng.uniform(-bound, bound);
  return p;
}

void ClassifierParams::collect(ParameterSet& out, const std::string& prefix) {
  out.push_back({prefix + "weight", &weight});
  out.push_back({prefix + "bias", &bias});
}

Var classify(Tape& tape, Var fused, ClassifierParams& params) {
  const Tensor& r = fused.value();
  if (r.rank() != 2 || r.rows() != 1 || r.cols() != params.weight.cols()) {
    throw ShapeError("classify: representation " + shape_to_string(r.shape()) + " does not match classifier " +
                     shape_to_string(params.weight.shape()));
  }
  return add_row_bias(matmul(fused, transpose(tape.parameter(params.weight))), tape.parameter(params.bias));
}

}  // namespace fergcn
