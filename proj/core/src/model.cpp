#include "fergcn/model.hpp"

#include <cmath>

#include "fergcn/errors.hpp"

namespace fergcn {

void ModelConfig::validate() const {
  encoder.validate();
  if (frames == 0) throw ConfigError("frame count must be positive");
  if (classes < 2) throw ConfigError("need at least two classes");
  if (module_count > 0 && feature_dim() % 2 != 0) {
    throw ConfigError("feature dimension must be even for the recurrent layer");
  }
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky relu slope must lie in (0, 1)");
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const CounterRng root(seed, 0x6d6f64656cULL);
  Model m;
  m.config = config;
  auto enc_rng = root.substream(1);
  m.encoder = ConvEncoderParams::init(config.encoder, enc_rng);
  m.encoder.config.slope = config.slope;
  m.adjacency = identity_adjacency(config.frames);
  for (std::size_t k = 0; k < config.module_count; ++k) {
    auto rng = root.substream(100 + k);
    m.modules.push_back(GraphModuleParams::init(config.feature_dim(), rng, config.cell));
    m.modules.back().gcn.slope = config.slope;
  }
  auto cls_rng = root.substream(2);
  m.classifier = ClassifierParams::init(config.classes, config.feature_dim(), cls_rng);
  zero_grads(m.parameters());
  return m;
}

ParameterSet Model::parameters() {
  ParameterSet out;
  encoder.collect(out);
  out.push_back({"adjacency", &adjacency});
  for (std::size_t k = 0; k < modules.size(); ++k) modules[k].collect(out, "module" + std::to_string(k) + ".");
  classifier.collect(out);
  return out;
}

ModelOutputs model_forward(Tape& tape, Model& model, const ImageSequence& images, const ForwardOptions& options) {
  if (images.frames != model.config.frames) {
    throw ShapeError("model expects " + std::to_string(model.config.frames) + " frames, got " +
                     std::to_string(images.frames));
  }
  ModelOutputs out;
  const auto trace = encode_sequence_traced(tape, images, model.encoder);
  out.encoded = trace.features;
  out.encoder_maps = trace.activations;
  const Var adjacency = tape.parameter(model.adjacency);
  out.module_outputs = stacked_forward_all(tape, out.encoded, adjacency, model.modules);
  const Var features = out.final_features();
  if (model.config.weighted_fusion) {
    const Var source = options.fusion_adjacency ? tape.constant(*options.fusion_adjacency) : adjacency;
    out.weights = intensity_weights(source, model.config.fusion_axis);
    out.fused = weighted_fusion(features, out.weights);
  } else {
    const std::size_t n = model.config.frames;
    out.weights = tape.constant(Tensor::filled({1, n}, 1.0 / static_cast<double>(n)));
    out.fused = mean_over_rows(features);
  }
  out.logits = classify(tape, out.fused, model.classifier);
  return out;
}

double mean_offdiagonal_magnitude(const Tensor& a) {
  const std::size_t n = a.rows();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) total += std::abs(a.at(i, j));
  return total / static_cast<double>(n * (n - 1));
}

std::vector<double> current_weight_curve(const Model& model) {
  Tape tape(Tape::Mode::kInference);
  const Var w = intensity_weights(tape.constant(model.adjacency), model.config.fusion_axis);
  return {w.value().values().begin(), w.value().values().end()};
}

}  // namespace fergcn
