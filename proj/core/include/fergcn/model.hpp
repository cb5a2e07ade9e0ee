#pragma once

#include <cstdint>
#include <vector>

#include "fergcn/encoder.hpp"
#include "fergcn/fusion.hpp"
#include "fergcn/graph.hpp"

namespace fergcn {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t frames = 16;
  std::size_t classes = 6;
  std::size_t module_count = 2;
  bool weighted_fusion = true;
  FusionAxis fusion_axis = FusionAxis::kColumn;
  RecurrentCell cell = RecurrentCell::kPlain;
  double slope = 0.2;

  void validate() const;
  std::size_t feature_dim() const { return encoder.feature_dim; }
};

/// Every parameter group of the pipeline. The adjacency is a single tensor
/// shared by all graph modules.
struct Model {
  ModelConfig config;
  ConvEncoderParams encoder;
  Tensor adjacency;
  std::vector<GraphModuleParams> modules;
  ClassifierParams classifier;

  static Model init(const ModelConfig& config, std::uint64_t seed);
  ParameterSet parameters();
};

struct ModelOutputs {
  Var logits;           // 1 x K
  Var weights;          // 1 x N intensity weights (uniform without fusion)
  Var encoded;          // N x d encoder features
  Var encoder_maps;     // [N, c2, rows/4, cols/4]
  std::vector<Var> module_outputs;
  Var fused;            // 1 x d
  Var final_features() const { return module_outputs.empty() ? encoded : module_outputs.back(); }
};

struct ForwardOptions {
  // When set, the intensity weights are computed from this tensor as a
  // constant instead of the live adjacency.
  const Tensor* fusion_adjacency = nullptr;
};

/// encode -> stacked graph modules -> intensity weights -> fusion -> classify.
/// Without weighted fusion the frame features are mean-pooled.
ModelOutputs model_forward(Tape& tape, Model& model, const ImageSequence& images, const ForwardOptions& options = {});

/// Mean absolute off-diagonal entry of a square matrix.
double mean_offdiagonal_magnitude(const Tensor& a);

/// Intensity weights of the current adjacency, outside any training tape.
std::vector<double> current_weight_curve(const Model& model);

}  // namespace fergcn
