#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fergcn/export.hpp"
#include "fergcn/synth.hpp"

using namespace fergcn;

namespace {

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::size_t count_fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

struct Pgm {
  std::string magic;
  std::size_t cols = 0, rows = 0, maxval = 0;
  std::vector<int> pixels;
};

Pgm parse_pgm(const std::string& text) {
  std::istringstream in(text);
  Pgm p;
  in >> p.magic >> p.cols >> p.rows >> p.maxval;
  for (int v; in >> v;) p.pixels.push_back(v);
  return p;
}

Model small_model(std::size_t modules) {
  ModelConfig c;
  c.encoder.frame_rows = c.encoder.frame_cols = 8;
  c.encoder.channels1 = 2;
  c.encoder.channels2 = 3;
  c.encoder.feature_dim = 6;
  c.frames = 4;
  c.classes = 3;
  c.module_count = modules;
  return Model::init(c, 9);
}

ImageSequence sample_images() {
  SyntheticSpec s;
  s.classes = 3;
  s.frames = 4;
  s.rows = s.cols = 8;
  return make_sample(s, 1, CounterRng(4, 4)).images;
}

}  // namespace

TEST(Export, SigmoidMappingOfZScores) {
  const auto flat = sigmoid_mapped({0.25, 0.25, 0.25, 0.25});
  for (double v : flat) EXPECT_EQ(v, 0.5);
  // population z-scores of {0, 1} are {-1, 1}
  const auto m = sigmoid_mapped({0.0, 1.0});
  EXPECT_NEAR(m[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(m[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  const auto r = sigmoid_mapped({0.1, 0.2, 0.3, 0.4});
  EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
}

TEST(Export, WeightCsvHasOneColumnPerFrame) {
  const std::vector<double> w{0.1, 0.2, 0.3, 0.15, 0.25};
  const auto lines = split_lines(weights_csv(w));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "w_1,w_2,w_3,w_4,w_5");
  for (const auto& l : lines) EXPECT_EQ(count_fields(l), 5u);
  std::istringstream raw(lines[1]);
  for (double expected : w) {
    std::string cell;
    std::getline(raw, cell, ',');
    EXPECT_EQ(std::stod(cell), expected);
  }
}

TEST(Export, PgmIsPlainWithMaxval255) {
  Heatmap h{2, 3, {0.0, 0.5, 1.0, 2.0, 0.25, 0.75}};
  const auto p = parse_pgm(to_pgm(h, 1.0));
  EXPECT_EQ(p.magic, "P2");
  EXPECT_EQ(p.cols, 3u);
  EXPECT_EQ(p.rows, 2u);
  EXPECT_EQ(p.maxval, 255u);
  ASSERT_EQ(p.pixels.size(), 6u);
  EXPECT_EQ(p.pixels[0], 0);
  EXPECT_EQ(p.pixels[2], 255);
  EXPECT_EQ(p.pixels[3], 255);
  for (int v : p.pixels) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 255);
  }
}

TEST(Export, HeatmapsCoverEveryFrameAtFrameSize) {
  for (std::size_t modules : {0u, 2u}) {
    auto m = small_model(modules);
    const auto set = feature_heatmaps(m, sample_images());
    ASSERT_EQ(set.before.size(), 4u);
    ASSERT_EQ(set.after.size(), 4u);
    for (const auto* group : {&set.before, &set.after}) {
      for (const auto& h : *group) {
        EXPECT_EQ(h.rows, 8u);
        EXPECT_EQ(h.cols, 8u);
        ASSERT_EQ(h.values.size(), 64u);
        for (double v : h.values) EXPECT_GE(v, 0.0);
      }
    }
  }
}

TEST(Export, WrittenHeatmapsAreValidGraymaps) {
  auto m = small_model(1);
  const auto set = feature_heatmaps(m, sample_images());
  const auto dir = std::filesystem::temp_directory_path() / "fergcn_test_heatmaps";
  std::filesystem::remove_all(dir);
  const auto paths = write_heatmaps(set, dir);
  ASSERT_EQ(paths.size(), 8u);
  EXPECT_EQ(paths.front().filename(), "before_01.pgm");
  int brightest = 0;
  for (const auto& path : paths) {
    std::ifstream in(path);
    std::stringstream text;
    text << in.rdbuf();
    const auto p = parse_pgm(text.str());
    EXPECT_EQ(p.magic, "P2");
    EXPECT_EQ(p.maxval, 255u);
    EXPECT_EQ(p.pixels.size(), 64u);
    for (int v : p.pixels) brightest = std::max(brightest, v);
  }
  EXPECT_EQ(brightest, 255);
  std::filesystem::remove_all(dir);
}
