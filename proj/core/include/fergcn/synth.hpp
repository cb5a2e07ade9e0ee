#pragma once

// Synthetic expression-sequence generator.
//
// Each class owns a fixed square region of the frame with its own texture.
// A sample's class pattern is scaled frame by frame by an intensity curve
// (ramp: neutral -> peak, bump: neutral -> peak -> neutral) and drawn over a
// static per-sample background that holds class-independent distractor
// patches, plus per-pixel gaussian noise. Curve, distractors and noise use
// separate counter-based substreams of the sample's stream.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fergcn/encoder.hpp"
#include "fergcn/rng.hpp"

namespace fergcn {

enum class CurveFamily { kRamp, kBump };

std::string curve_family_name(CurveFamily f);
CurveFamily parse_curve_family(const std::string& s);

struct SyntheticSpec {
  std::size_t classes = 6;
  std::size_t frames = 16;
  std::size_t rows = 16;
  std::size_t cols = 16;
  CurveFamily curve = CurveFamily::kRamp;
  double noise_sigma = 0.65;
  std::size_t region_size = 4;  // side of the square class region, pixels
  std::size_t distractors = 2;
  double background = 0.1;
  double pattern_amplitude = 0.8;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t slot_count() const { return (rows / region_size) * (cols / region_size); }
  /// Top-left corner of the class region for `label`.
  std::pair<std::size_t, std::size_t> class_origin(std::size_t label) const;
};

struct SequenceSample {
  ImageSequence images;
  std::uint16_t label = 0;
  std::vector<double> intensity;    // N values, peak normalised to 1
  std::vector<std::uint8_t> mask;   // rows * cols, 1 inside the class region

  friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

/// Draws an intensity curve of the spec's family.
std::vector<double> draw_intensity(const SyntheticSpec& spec, CounterRng& rng);

/// Class texture value in [0, 1] at local region coordinates.
double class_texture(std::size_t label, std::size_t y, std::size_t x, std::size_t side);

/// Static background (level + distractor patches) for one sample.
std::vector<double> render_background(const SyntheticSpec& spec, CounterRng& distractor_rng);

/// Renders frames for an explicit intensity curve. `sample_rng` is the
/// sample's stream; distractors and noise use its substreams.
SequenceSample render_sample(const SyntheticSpec& spec, std::uint16_t label, std::span<const double> intensity,
                             const CounterRng& sample_rng);

/// Draws an intensity curve from `sample_rng` and renders the sample.
SequenceSample make_sample(const SyntheticSpec& spec, std::uint16_t label, const CounterRng& sample_rng);

struct DatasetInfo {
  std::size_t classes = 0;
  std::size_t frames = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  CurveFamily curve = CurveFamily::kRamp;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetInfo&, const DatasetInfo&) = default;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// 80/20 split stratified by class, determined by the labels and seed.
Split stratified_split(std::span<const std::uint16_t> labels, std::size_t classes, std::uint64_t seed);

struct Dataset {
  DatasetInfo info;
  std::vector<SequenceSample> samples;
  Split split;

  std::vector<std::uint16_t> labels() const;
};

/// `per_class` samples of every class, class-major, plus the stratified split.
Dataset make_dataset(const SyntheticSpec& spec, std::size_t per_class);

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::vector<std::uint8_t> bytes);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace fergcn
