#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fergcn/errors.hpp"
#include "fergcn/fusion.hpp"
#include "fergcn/gradcheck.hpp"
#include "fergcn/gradcheck_suite.hpp"
#include "fergcn/model.hpp"
#include "fergcn/rng.hpp"

using namespace fergcn;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, CounterRng& rng, double lo = -1, double hi = 1) {
  Tensor t({r, c});
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor weights_of(const Tensor& a, FusionAxis axis = FusionAxis::kColumn) {
  Tape tape(Tape::Mode::kInference);
  return intensity_weights(tape.constant(a), axis).value();
}

Tensor fuse(const Tensor& h, const Tensor& w) {
  Tape tape(Tape::Mode::kInference);
  return weighted_fusion(tape.constant(h), tape.constant(w)).value();
}

std::vector<std::size_t> random_perm(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.encoder.frame_rows = cfg.encoder.frame_cols = 8;
  cfg.encoder.channels1 = 2;
  cfg.encoder.channels2 = 2;
  cfg.encoder.feature_dim = 4;
  cfg.frames = 5;
  cfg.classes = 3;
  return cfg;
}

ImageSequence random_images(std::size_t n, std::size_t side, CounterRng& rng) {
  ImageSequence img{n, side, side, {}};
  for (std::size_t i = 0; i < n * side * side; ++i) img.pixels.push_back(rng.uniform());
  return img;
}

}  // namespace

// intensity_weights

TEST(IntensityWeights, IdentityIsUniform) {
  const Tensor w = weights_of(Tensor::identity(3));
  for (double v : w.values()) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
}

TEST(IntensityWeights, TwoFrameExample) {
  const Tensor w = weights_of(Tensor::matrix({{1, 0}, {1, 1}}));
  EXPECT_NEAR(w[0], 0.62246, 1e-5);
  EXPECT_NEAR(w[1], 0.37754, 1e-5);
  // Column means [1, 0.5] through an independent softmax.
  const double e0 = std::exp(1.0), e1 = std::exp(0.5);
  EXPECT_NEAR(w[0], e0 / (e0 + e1), 1e-15);
}

TEST(IntensityWeights, RowAxisAveragesRows) {
  const Tensor w = weights_of(Tensor::matrix({{1, 0}, {1, 1}}), FusionAxis::kRow);
  const double e0 = std::exp(0.5), e1 = std::exp(1.0);
  EXPECT_NEAR(w[0], e0 / (e0 + e1), 1e-15);
}

TEST(IntensityWeights, ArgmaxFollowsLargestColumnMean) {
  CounterRng rng(1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(8);
    Tensor a = random_matrix(n, n, rng);
    const std::size_t star = rng.below(n);
    for (std::size_t i = 0; i < n; ++i) a.at(i, star) += 2.5;
    const Tensor w = weights_of(a);
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (w[j] > w[best]) best = j;
    EXPECT_EQ(best, star);
  }
}

TEST(IntensityWeights, PositiveAndNormalised) {
  CounterRng rng(2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    const Tensor w = weights_of(random_matrix(n, n, rng, -5, 5));
    EXPECT_EQ(w.shape(), (Shape{1, n}));
    double total = 0.0;
    for (double v : w.values()) {
      EXPECT_GT(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(IntensityWeights, ShiftInvariance) {
  CounterRng rng(3, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    const Tensor a = random_matrix(n, n, rng);
    Tensor shifted = a;
    const double c = rng.uniform(-10, 10);
    for (auto& v : shifted.values()) v += c;
    EXPECT_LE(max_abs_diff(weights_of(a), weights_of(shifted)), 1e-12);
  }
}

TEST(IntensityWeights, BranchContributesNoAdjacencyGradient) {
  CounterRng rng(4, 4);
  Tensor a = random_matrix(4, 4, rng);
  const Tensor h = random_matrix(4, 3, rng);
  zero_grads({{"a", &a}});
  Tape tape;
  tape.backward(sum(weighted_fusion(tape.constant(h), intensity_weights(tape.parameter(a)))));
  for (double g : a.grad()) EXPECT_EQ(g, 0.0);
}

// weighted_fusion

TEST(WeightedFusion, UniformWeightsGiveMean) {
  const Tensor h = Tensor::matrix({{1, 2}, {3, 5}, {8, -1}});
  const Tensor r = fuse(h, Tensor::filled({1, 3}, 1.0 / 3));
  EXPECT_NEAR(r[0], 4.0, 1e-15);
  EXPECT_NEAR(r[1], 2.0, 1e-15);
}

TEST(WeightedFusion, OneHotSelectsFrame) {
  const Tensor h = Tensor::matrix({{1, 2}, {3, 5}, {8, -1}});
  EXPECT_EQ(fuse(h, Tensor::row({0, 1, 0})), Tensor::matrix({{3, 5}}));
}

TEST(WeightedFusion, HandExample) {
  EXPECT_EQ(fuse(Tensor::matrix({{0, 4}, {4, 0}}), Tensor::row({0.25, 0.75})), Tensor::matrix({{3, 1}}));
}

TEST(WeightedFusion, Linearity) {
  CounterRng rng(5, 5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(5);
    const Tensor h = random_matrix(n, d, rng), g = random_matrix(n, d, rng);
    const Tensor w = weights_of(random_matrix(n, n, rng));
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    Tensor mix({n, d});
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * h[i] + beta * g[i];
    const Tensor lhs = fuse(mix, w);
    const Tensor rh = fuse(h, w), rg = fuse(g, w);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(lhs[c], alpha * rh[c] + beta * rg[c], 1e-12);
  }
}

TEST(WeightedFusion, LengthMismatch) {
  Tape tape;
  EXPECT_THROW(weighted_fusion(tape.constant(Tensor::zeros({3, 2})), tape.constant(Tensor::filled({1, 2}, 0.5))),
               ShapeError);
}

TEST(Fusion, PermutationConsistency) {
  CounterRng rng(6, 6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(6), d = 1 + rng.below(4);
    const Tensor a = random_matrix(n, n, rng), h = random_matrix(n, d, rng);
    const auto p = random_perm(n, rng);
    Tensor pa({n, n}), ph({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) pa.at(i, j) = a.at(p[i], p[j]);
      for (std::size_t c = 0; c < d; ++c) ph.at(i, c) = h.at(p[i], c);
    }
    const Tensor w = weights_of(a), pw = weights_of(pa);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(pw[i], w[p[i]], 1e-15);
    EXPECT_LE(max_abs_diff(fuse(ph, pw), fuse(h, w)), 1e-12);
  }
}

// classify

TEST(Classify, ZeroParametersGiveUniformPrediction) {
  auto cls = ClassifierParams::zeros(6, 4);
  Tape tape(Tape::Mode::kInference);
  const Var logits = classify(tape, tape.constant(Tensor::row({1, -2, 3, 4})), cls);
  EXPECT_EQ(logits.value(), Tensor::zeros({1, 6}));
  const Tensor p = softmax_vector(logits).value();
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 6, 1e-15);
}

TEST(Classify, IdenticalRowsGiveEqualLogits) {
  CounterRng rng(7, 7);
  auto cls = ClassifierParams::zeros(2, 4);
  for (std::size_t c = 0; c < 4; ++c) cls.weight.at(0, c) = cls.weight.at(1, c) = rng.uniform(-1, 1);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape(Tape::Mode::kInference);
    const Tensor l = classify(tape, tape.constant(random_matrix(1, 4, rng)), cls).value();
    EXPECT_EQ(l[0], l[1]);
  }
}

TEST(Classify, MatchesDenseOracle) {
  CounterRng rng(8, 8);
  auto cls = ClassifierParams::init(3, 4, rng);
  for (auto& v : cls.bias.values()) v = rng.uniform(-1, 1);
  const Tensor r = random_matrix(1, 4, rng);
  Tape tape(Tape::Mode::kInference);
  const Tensor l = classify(tape, tape.constant(r), cls).value();
  EXPECT_EQ(l.shape(), (Shape{1, 3}));
  for (std::size_t k = 0; k < 3; ++k) {
    double acc = cls.bias[k];
    for (std::size_t c = 0; c < 4; ++c) acc += cls.weight.at(k, c) * r[c];
    EXPECT_NEAR(l[k], acc, 1e-15);
  }
}

// model_forward

TEST(ModelForward, LogitsShapeAtDefaultScale) {
  ModelConfig cfg;
  Model m = Model::init(cfg, 1);
  CounterRng rng(9, 9);
  Tape tape(Tape::Mode::kInference);
  const auto out = model_forward(tape, m, random_images(16, 16, rng));
  EXPECT_EQ(out.logits.shape(), (Shape{1, 6}));
  EXPECT_EQ(out.weights.shape(), (Shape{1, 16}));
  EXPECT_EQ(out.module_outputs.size(), 2u);
  EXPECT_EQ(out.encoded.shape(), (Shape{16, 32}));
}

TEST(ModelForward, DeterministicBitwise) {
  Model m = Model::init(tiny_config(), 3);
  CounterRng rng(10, 10);
  const auto img = random_images(5, 8, rng);
  Tape t1(Tape::Mode::kInference), t2(Tape::Mode::kInference);
  EXPECT_EQ(model_forward(t1, m, img).logits.value(), model_forward(t2, m, img).logits.value());
}

TEST(ModelForward, AdjacencyStartsAsIdentityAndIsShared) {
  Model m = Model::init(tiny_config(), 4);
  EXPECT_EQ(m.adjacency, Tensor::identity(5));
  EXPECT_EQ(mean_offdiagonal_magnitude(m.adjacency), 0.0);
  int count = 0;
  for (const auto& p : m.parameters()) count += p.name == "adjacency";
  EXPECT_EQ(count, 1);
}

TEST(ModelForward, WithoutFusionMeanPools) {
  auto cfg = tiny_config();
  cfg.weighted_fusion = false;
  Model m = Model::init(cfg, 5);
  CounterRng rng(11, 11);
  Tape tape(Tape::Mode::kInference);
  const auto out = model_forward(tape, m, random_images(5, 8, rng));
  const Tensor mean = mean_over_rows(out.final_features()).value();
  EXPECT_EQ(out.fused.value(), mean);
}

TEST(ModelForward, FrameCountMismatch) {
  Model m = Model::init(tiny_config(), 6);
  CounterRng rng(12, 12);
  Tape tape;
  EXPECT_THROW(model_forward(tape, m, random_images(4, 8, rng)), ShapeError);
}

TEST(ModelForward, EndToEndGradientCheck) {
  const auto report = run_gradcheck_suite(GradScope::kEndToEnd);
  EXPECT_TRUE(report.passed);
  bool saw_adjacency = false;
  for (const auto& g : report.groups) {
    EXPECT_LT(g.max_rel_error, 1e-4) << g.suite << " " << g.group;
    saw_adjacency |= g.group == "adjacency";
  }
  EXPECT_TRUE(saw_adjacency);
}

TEST(ModelForward, StopGradientSuite) {
  const auto report = run_gradcheck_suite(GradScope::kStopGradient);
  EXPECT_TRUE(report.passed);
  for (const auto& g : report.groups)
    if (g.suite == "stop_gradient/fusion_branch") EXPECT_EQ(g.max_rel_error, 0.0);
}

TEST(ModelForward, LiveFusionBranchWouldChangeTheAdjacencyGradient) {
  // Sanity check on the oracle: differencing through the live fusion branch
  // gives a different answer, so the frozen-weights comparison is meaningful.
  auto cfg = tiny_config();
  cfg.frames = 3;
  Model m = Model::init(cfg, 7);
  CounterRng rng(13, 13);
  for (auto& v : m.adjacency.values()) v += rng.uniform(-0.3, 0.3);
  const auto img = random_images(3, 8, rng);
  const Tensor frozen = m.adjacency;
  const LossBuilder live = [&](Tape& t) { return cross_entropy(model_forward(t, m, img).logits, 1); };
  const LossBuilder held = [&](Tape& t) {
    ForwardOptions o;
    if (t.mode() == Tape::Mode::kInference) o.fusion_adjacency = &frozen;
    return cross_entropy(model_forward(t, m, img, o).logits, 1);
  };
  EXPECT_TRUE(check_gradients(held, {{"adjacency", &m.adjacency}}).passed);
  EXPECT_FALSE(check_gradients(live, {{"adjacency", &m.adjacency}}).passed);
}
