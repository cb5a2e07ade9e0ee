#include "fergcn/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fergcn/container.hpp"
#include "fergcn/errors.hpp"

namespace fergcn {

std::vector<double> sigmoid_mapped(const std::vector<double>& weights) {
  if (weights.empty()) return {};
  double mean = 0.0;
  for (double w : weights) mean += w;
  mean /= static_cast<double>(weights.size());
  double var = 0.0;
  for (double w : weights) var += (w - mean) * (w - mean);
  const double sd = std::sqrt(var / static_cast<double>(weights.size()));
  std::vector<double> out;
  out.reserve(weights.size());
  for (double w : weights) {
    const double z = sd > 0.0 ? (w - mean) / sd : 0.0;
    out.push_back(1.0 / (1.0 + std::exp(-z)));
  }
  return out;
}

namespace {

void csv_row(std::ostringstream& os, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    os << (i ? "," : "") << buf;
  }
  os << "\n";
}

// Channel energy of a [C, h, w] block, upsampled by `factor` (nearest).
Heatmap energy_map(std::span<const double> block, std::size_t channels, std::size_t h, std::size_t w,
                   std::size_t factor) {
  Heatmap m{h * factor, w * factor, std::vector<double>(h * w * factor * factor, 0.0)};
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      double e = 0.0;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const double v = block[(ch * h + r / factor) * w + c / factor];
        e += v * v;
      }
      m.values[r * m.cols + c] = e;
    }
  return m;
}

double set_max(const std::vector<Heatmap>& maps) {
  double mx = 0.0;
  for (const auto& m : maps)
    for (double v : m.values) mx = std::max(mx, v);
  return mx;
}

}  // namespace

std::string weights_csv(const std::vector<double>& weights) {
  std::ostringstream os;
  for (std::size_t i = 0; i < weights.size(); ++i) os << (i ? "," : "") << "w_" << i + 1;
  os << "\n";
  csv_row(os, weights);
  csv_row(os, sigmoid_mapped(weights));
  return os.str();
}

HeatmapSet feature_heatmaps(Model& model, const ImageSequence& images) {
  Tape tape(Tape::Mode::kInference);
  const ModelOutputs out = model_forward(tape, model, images);
  const auto& cfg = model.encoder.config;
  const std::size_t c2 = cfg.channels2, h = cfg.frame_rows / 4, w = cfg.frame_cols / 4;
  const std::size_t block = c2 * h * w;
  const Tensor& maps = out.encoder_maps.value();
  const Tensor& feats = out.final_features().value();
  const Tensor& proj = model.encoder.projection;  // [block, d]
  HeatmapSet set;
  std::vector<double> back(block);
  for (std::size_t t = 0; t < images.frames; ++t) {
    set.before.push_back(energy_map(maps.values().subspan(t * block, block), c2, h, w, 4));
    for (std::size_t k = 0; k < block; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < feats.cols(); ++j) acc += proj.at(k, j) * feats.at(t, j);
      back[k] = acc;
    }
    set.after.push_back(energy_map(back, c2, h, w, 4));
  }
  return set;
}

std::string to_pgm(const Heatmap& map, double scale_max) {
  std::ostringstream os;
  os << "P2\n" << map.cols << " " << map.rows << "\n255\n";
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) {
      const double v = map.values[r * map.cols + c];
      const double q = scale_max > 0.0 ? std::clamp(v / scale_max, 0.0, 1.0) * 255.0 : 0.0;
      os << (c ? " " : "") << static_cast<int>(std::lround(q));
    }
    os << "\n";
  }
  return os.str();
}

std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::vector<Heatmap>& maps, const std::string& stem) {
    const double mx = set_max(maps);
    for (std::size_t t = 0; t < maps.size(); ++t) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%02zu.pgm", stem.c_str(), t + 1);
      const auto path = dir / name;
      const std::string text = to_pgm(maps[t], mx);
      write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
      written.push_back(path);
    }
  };
  emit(set.before, "before");
  emit(set.after, "after");
  return written;
}

}  // namespace fergcn
