#include "fergcn/encoder.hpp"

#include <cmath>

#include "fergcn/errors.hpp"

namespace fergcn {

void ImageSequence::validate() const {
  if (frames == 0 || rows == 0 || cols == 0) throw ShapeError("image sequence has an empty dimension");
  if (pixels.size() != frames * rows * cols) {
    throw ShapeError("image sequence needs " + std::to_string(frames * rows * cols) + " pixels, got " +
                     std::to_string(pixels.size()));
  }
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw ShapeError("pixel value outside [0, 1]");
  }
}

Tensor ImageSequence::as_tensor() const { return Tensor({frames, 1, rows, cols}, pixels); }

void EncoderConfig::validate() const {
  if (kernel % 2 == 0) throw ConfigError("encoder kernel size must be odd");
  if (frame_rows % 4 != 0 || frame_cols % 4 != 0 || frame_rows == 0 || frame_cols == 0) {
    throw ConfigError("frame size " + std::to_string(frame_rows) + "x" + std::to_string(frame_cols) +
                      " must be a positive multiple of 4 (two 2x2 pooling stages)");
  }
  if (channels1 == 0 || channels2 == 0 || feature_dim == 0) throw ConfigError("encoder widths must be positive");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ConvEncoderParams ConvEncoderParams::init(const EncoderConfig& config, CounterRng& rng) {
  config.validate();
  const std::size_t k = config.kernel;
  ConvEncoderParams p;
  p.config = config;
  // He-style uniform bounds sized by fan-in.
  p.conv1_kernel = uniform_tensor({config.channels1, 1, k, k}, std::sqrt(6.0 / static_cast<double>(k * k)), rng);
  p.conv1_bias = Tensor({config.channels1});
  p.conv2_kernel = uniform_tensor({config.channels2, config.channels1, k, k},
                                  std::sqrt(6.0 / static_cast<double>(config.channels1 * k * k)), rng);
  p.conv2_bias = Tensor({config.channels2});
  p.projection = uniform_tensor({config.flattened_size(), config.feature_dim},
                                std::sqrt(6.0 / static_cast<double>(config.flattened_size() + config.feature_dim)),
                                rng);
  p.projection_bias = Tensor({1, config.feature_dim});
  return p;
}

void ConvEncoderParams::collect(ParameterSet& out, const std::string& prefix) {
  out.push_back({prefix + "conv1_kernel", &conv1_kernel});
  out.push_back({prefix + "conv1_bias", &conv1_bias});
  out.push_back({prefix + "conv2_kernel", &conv2_kernel});
  out.push_back({prefix + "conv2_bias", &conv2_bias});
  out.push_back({prefix + "projection", &projection});
  out.push_back({prefix + "projection_bias", &projection_bias});
}

EncoderTrace encode_sequence_traced(Tape& tape, const ImageSequence& images, ConvEncoderParams& params) {
  images.validate();
  const auto& cfg = params.config;
  if (images.rows != cfg.frame_rows || images.cols != cfg.frame_cols) {
    throw ShapeError("encoder expects " + std::to_string(cfg.frame_rows) + "x" + std::to_string(cfg.frame_cols) +
                     " frames, got " + std::to_string(images.rows) + "x" + std::to_string(images.cols));
  }
  const Var x = tape.constant(images.as_tensor());
  Var h = conv2d(x, tape.parameter(params.conv1_kernel), tape.parameter(params.conv1_bias));
  h = mean_pool2(leaky_relu(h, cfg.slope));
  h = conv2d(h, tape.parameter(params.conv2_kernel), tape.parameter(params.conv2_bias));
  const Var activations = mean_pool2(leaky_relu(h, cfg.slope));
  const Var flat = reshape(activations, {images.frames, cfg.flattened_size()});
  const Var features =
      add_row_bias(matmul(flat, tape.parameter(params.projection)), tape.parameter(params.projection_bias));
  return {features, activations};
}

Var encode_sequence(Tape& tape, const ImageSequence& images, ConvEncoderParams& params) {
  return encode_sequence_traced(tape, images, params).features;
}

}  // namespace fergcn
