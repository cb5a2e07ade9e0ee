#pragma once

// Small two-stage convolutional frame encoder. Each frame is encoded
// independently with shared weights:
//   conv3x3 -> leaky relu -> 2x2 mean pool -> conv3x3 -> leaky relu
//   -> 2x2 mean pool -> flatten -> linear projection to d features.

#include <cstddef>
#include <vector>

#include "fergcn/autodiff.hpp"
#include "fergcn/optim.hpp"
#include "fergcn/rng.hpp"

namespace fergcn {

/// N grayscale frames of rows x cols pixels in [0, 1], stored frame-major.
struct ImageSequence {
  std::size_t frames = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;

  double& at(std::size_t t, std::size_t r, std::size_t c) { return pixels[(t * rows + r) * cols + c]; }
  double at(std::size_t t, std::size_t r, std::size_t c) const { return pixels[(t * rows + r) * cols + c]; }

  /// Throws ShapeError on inconsistent sizes or pixels outside [0, 1].
  void validate() const;
  Tensor as_tensor() const;  // [N, 1, rows, cols]

  friend bool operator==(const ImageSequence&, const ImageSequence&) = default;
};

struct EncoderConfig {
  std::size_t frame_rows = 16;
  std::size_t frame_cols = 16;
  std::size_t channels1 = 4;
  std::size_t channels2 = 8;
  std::size_t kernel = 3;
  std::size_t feature_dim = 32;
  double slope = 0.2;

  void validate() const;
  std::size_t flattened_size() const { return channels2 * (frame_rows / 4) * (frame_cols / 4); }
};

struct ConvEncoderParams {
  EncoderConfig config;
  Tensor conv1_kernel;     // [c1, 1, k, k]
  Tensor conv1_bias;       // [c1]
  Tensor conv2_kernel;     // [c2, c1, k, k]
  Tensor conv2_bias;       // [c2]
  Tensor projection;       // [flattened, d]
  Tensor projection_bias;  // [1, d]

  static ConvEncoderParams init(const EncoderConfig& config, CounterRng& rng);
  void collect(ParameterSet& out, const std::string& prefix = "encoder.");
};

struct EncoderTrace {
  Var features;     // N x d
  Var activations;  // [N, c2, rows/4, cols/4], input to the projection
};

/// Encodes every frame of `images`; output is N x d and differentiable with
/// respect to all encoder parameters.
EncoderTrace encode_sequence_traced(Tape& tape, const ImageSequence& images, ConvEncoderParams& params);
Var encode_sequence(Tape& tape, const ImageSequence& images, ConvEncoderParams& params);

}  // namespace fergcn
