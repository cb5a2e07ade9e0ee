#pragma once

// Precomputed frame features, stored with the dataset framing where the
// per-sample mask and frame payload are sized by the feature dimension d
// instead of rows * cols.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fergcn/synth.hpp"
#include "fergcn/tensor.hpp"

namespace fergcn {

/// N frame feature vectors of dimension d, one per row.
struct FrameFeatureSequence {
  Tensor features;  // N x d

  std::size_t frames() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;

  friend bool operator==(const FrameFeatureSequence&, const FrameFeatureSequence&) = default;
};

struct FeatureRecord {
  std::uint16_t label = 0;
  std::vector<double> intensity;   // N
  std::vector<std::uint8_t> mask;  // d
  FrameFeatureSequence sequence;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureFile {
  std::size_t classes = 2;
  std::size_t frames = 0;
  std::size_t dim = 0;
  CurveFamily curve = CurveFamily::kRamp;
  std::uint64_t seed = 0;
  std::vector<FeatureRecord> records;
};

std::vector<std::uint8_t> encode_features(const FeatureFile& file);
FeatureFile decode_features(std::vector<std::uint8_t> bytes);
void write_features(const FeatureFile& file, const std::filesystem::path& path);
FeatureFile read_features(const std::filesystem::path& path);

/// Convenience wrapper: the `index`-th sequence of a feature file.
FrameFeatureSequence load_features(const std::filesystem::path& path, std::size_t index = 0);

/// Chronological selection of `target` frames: frame j takes source row
/// floor(j * M / target). Frames repeat when the source is shorter.
FrameFeatureSequence resample_frames(const FrameFeatureSequence& seq, std::size_t target);

}  // namespace fergcn
