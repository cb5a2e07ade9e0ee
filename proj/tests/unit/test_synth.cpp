#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <map>

#include "fergcn/errors.hpp"
#include "fergcn/rng.hpp"
#include "fergcn/synth.hpp"

using namespace fergcn;

namespace {

SyntheticSpec quiet_spec() {
  SyntheticSpec s;
  s.noise_sigma = 0.0;
  return s;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST(Synth, ZeroIntensityZeroNoiseReproducesBackground) {
  const auto spec = quiet_spec();
  const CounterRng rng(11, 3);
  const std::vector<double> zeros(spec.frames, 0.0);
  const auto s = render_sample(spec, 2, zeros, rng);
  auto distractor_rng = rng.substream(2);
  const auto bg = render_background(spec, distractor_rng);
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t y = 0; y < spec.rows; ++y)
      for (std::size_t x = 0; x < spec.cols; ++x)
        EXPECT_EQ(s.images.at(t, y, x), std::clamp(bg[y * spec.cols + x], 0.0, 1.0));
  for (std::size_t t = 1; t < spec.frames; ++t)
    for (std::size_t p = 0; p < spec.rows * spec.cols; ++p)
      EXPECT_EQ(s.images.pixels[t * spec.rows * spec.cols + p], s.images.pixels[p]);
}

TEST(Synth, RampIsNonDecreasingAndEndsAtOne) {
  auto spec = quiet_spec();
  for (std::uint64_t i = 0; i < 200; ++i) {
    CounterRng rng(5, i);
    const auto c = draw_intensity(spec, rng);
    ASSERT_EQ(c.size(), spec.frames);
    EXPECT_EQ(c.back(), 1.0);
    for (std::size_t t = 1; t < c.size(); ++t) EXPECT_LE(c[t - 1], c[t]);
    EXPECT_GE(*std::min_element(c.begin(), c.end()), 0.0);
  }
}

TEST(Synth, BumpPeaksInsideWithLowEndpoints) {
  auto spec = quiet_spec();
  spec.curve = CurveFamily::kBump;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    CounterRng rng(6, i);
    const auto c = draw_intensity(spec, rng);
    const std::size_t m = argmax(c);
    EXPECT_GT(m, 0u);
    EXPECT_LT(m, spec.frames - 1);
    EXPECT_LT(c.front(), 0.5);
    EXPECT_LT(c.back(), 0.5);
    EXPECT_EQ(c[m], 1.0);
  }
}

TEST(Synth, SampleInvariants) {
  SyntheticSpec spec;
  for (auto family : {CurveFamily::kRamp, CurveFamily::kBump}) {
    spec.curve = family;
    for (std::uint16_t k = 0; k < spec.classes; ++k) {
      const auto s = make_sample(spec, k, CounterRng(9, k));
      EXPECT_EQ(*std::max_element(s.intensity.begin(), s.intensity.end()), 1.0);
      const auto ones = std::count(s.mask.begin(), s.mask.end(), 1);
      EXPECT_EQ(static_cast<std::size_t>(ones), spec.region_size * spec.region_size);
      for (double p : s.images.pixels) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
    }
  }
}

TEST(Synth, ClassRegionsAreDisjoint) {
  SyntheticSpec spec;
  std::vector<int> cover(spec.rows * spec.cols, 0);
  for (std::uint16_t k = 0; k < spec.classes; ++k) {
    const auto s = make_sample(spec, k, CounterRng(1, k));
    for (std::size_t p = 0; p < cover.size(); ++p) cover[p] += s.mask[p];
  }
  EXPECT_LE(*std::max_element(cover.begin(), cover.end()), 1);
}

TEST(Synth, SpecValidation) {
  SyntheticSpec s;
  s.classes = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.frames = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.region_size = 32;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.noise_sigma = -0.1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.classes = 17;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  EXPECT_THROW(make_sample(s, 6, CounterRng(1, 1)), IndexError);
  EXPECT_THROW(parse_curve_family("zigzag"), ConfigError);
  EXPECT_EQ(parse_curve_family(curve_family_name(CurveFamily::kBump)), CurveFamily::kBump);
}

TEST(Synth, DatasetSizesAndStratifiedSplit) {
  SyntheticSpec spec;
  const auto ds = make_dataset(spec, 50);
  ASSERT_EQ(ds.samples.size(), 300u);
  EXPECT_EQ(ds.split.train.size(), 240u);
  EXPECT_EQ(ds.split.val.size(), 60u);
  std::map<int, int> train_hist, val_hist;
  for (auto i : ds.split.train) ++train_hist[ds.samples[i].label];
  for (auto i : ds.split.val) ++val_hist[ds.samples[i].label];
  for (int k = 0; k < 6; ++k) {
    EXPECT_EQ(train_hist[k], 40);
    EXPECT_EQ(val_hist[k], 10);
  }
  std::vector<std::size_t> all = ds.split.train;
  all.insert(all.end(), ds.split.val.begin(), ds.split.val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(make_dataset(spec, 1), ConfigError);
}

TEST(Synth, SameSeedGivesIdenticalDataset) {
  SyntheticSpec spec;
  const auto a = make_dataset(spec, 5);
  const auto b = make_dataset(spec, 5);
  EXPECT_EQ(encode_dataset(a), encode_dataset(b));
  spec.seed = 2;
  EXPECT_NE(encode_dataset(a), encode_dataset(make_dataset(spec, 5)));
}

TEST(Synth, DatasetRoundTripIsExact) {
  SyntheticSpec spec;
  spec.curve = CurveFamily::kBump;
  const auto ds = make_dataset(spec, 4);
  const auto path = std::filesystem::temp_directory_path() / "fergcn_test_roundtrip.fgds";
  write_dataset(ds, path);
  const auto back = read_dataset(path);
  EXPECT_EQ(back.info, ds.info);
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.split.train, ds.split.train);
  EXPECT_EQ(back.split.val, ds.split.val);
  EXPECT_EQ(encode_dataset(back), encode_dataset(ds));
  std::filesystem::remove(path);
}

TEST(Synth, CorruptMagicAndVersion) {
  const auto bytes = encode_dataset(make_dataset(SyntheticSpec{}, 2));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), ParseError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    decode_dataset(bad_version);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  auto truncated = bytes;
  truncated.resize(truncated.size() - 1);
  EXPECT_THROW(decode_dataset(truncated), ParseError);
}

// Nearest-centroid on frame-averaged pixels separates every class without
// noise. Centroids come from a large independent draw so distractor averages
// settle; the classified set is an ordinary 50-per-class dataset.
TEST(Synth, NearestCentroidIsPerfectAtZeroNoise) {
  for (auto family : {CurveFamily::kRamp, CurveFamily::kBump}) {
    auto spec = quiet_spec();
    spec.curve = family;
    const std::size_t P = spec.rows * spec.cols;
    auto pooled = [&](const SequenceSample& s) {
      std::vector<double> m(P, 0.0);
      for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t p = 0; p < P; ++p) m[p] += s.images.pixels[t * P + p] / static_cast<double>(spec.frames);
      return m;
    };
    const std::size_t draws = 2000;
    std::vector<std::vector<double>> centroid(spec.classes, std::vector<double>(P, 0.0));
    for (std::uint16_t k = 0; k < spec.classes; ++k) {
      for (std::size_t j = 0; j < draws; ++j) {
        const auto m = pooled(make_sample(spec, k, CounterRng(991, k * draws + j)));
        for (std::size_t p = 0; p < P; ++p) centroid[k][p] += m[p] / static_cast<double>(draws);
      }
    }
    const auto ds = make_dataset(spec, 50);
    std::size_t correct = 0;
    for (const auto& s : ds.samples) {
      const auto m = pooled(s);
      double best = std::numeric_limits<double>::infinity();
      std::size_t pick = 0;
      for (std::size_t k = 0; k < spec.classes; ++k) {
        double dist = 0.0;
        for (std::size_t p = 0; p < P; ++p) dist += (m[p] - centroid[k][p]) * (m[p] - centroid[k][p]);
        if (dist < best) best = dist, pick = k;
      }
      correct += pick == s.label;
    }
    EXPECT_EQ(correct, ds.samples.size()) << curve_family_name(family);
  }
}
