#pragma once

// Visual exports of a trained model: the per-frame intensity weight curve and
// spatial energy maps of the encoder activations before and after the graph
// modules.

#include <filesystem>
#include <string>
#include <vector>

#include "fergcn/model.hpp"

namespace fergcn {

/// sigmoid((w - mean) / stddev), a presentation mapping only. A flat curve
/// maps to 0.5 everywhere.
std::vector<double> sigmoid_mapped(const std::vector<double>& weights);

/// Header w_1..w_N, then the raw row and the sigmoid-mapped row.
std::string weights_csv(const std::vector<double>& weights);

struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, non-negative
};

struct HeatmapSet {
  std::vector<Heatmap> before;  // one per frame
  std::vector<Heatmap> after;
};

/// "before": squared encoder activations summed over channels. "after": the
/// frame features leaving the last graph module, mapped back through the
/// encoder projection and reduced the same way. Both are upsampled to the
/// frame size.
HeatmapSet feature_heatmaps(Model& model, const ImageSequence& images);

/// Plain-text graymap (P2), maxval 255, scaled by `scale_max` (values at or
/// above it become 255).
std::string to_pgm(const Heatmap& map, double scale_max);

/// Writes before_XX.pgm and after_XX.pgm (frame numbers from 01); each set is
/// quantised against its own maximum. Returns the written paths.
std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set, const std::filesystem::path& dir);

}  // namespace fergcn
