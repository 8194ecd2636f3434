#include <gtest/gtest.h>

#include "clamp/paf.hpp"
#include "oracles.hpp"

using namespace clamp;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor(std::move(shape), std::move(v));
}

void randomise(ParamSet& ps, Rng& rng) {
  for (auto& p : ps.items())
    for (double& v : p.value.mutable_values()) v = rng.uniform(-0.8, 0.8);
}

struct Fixture {
  PafConfig cfg{.d_hidden = 6, .n_heads = 3, .dropout_p = 0.3, .l_max = 7, .use_self_bias = true};
  ParamSet ps;
  Rng rng{21};
  PafParams params = PafParams::make(cfg, 5, ps, rng);
  Fixture() { randomise(ps, rng); }
};

}  // namespace

TEST(Paf, AttentionStageMatchesDirectSummation) {
  Fixture f;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor text = random_tensor({3 + static_cast<std::size_t>(trial % 3), 6}, f.rng);
    const Tensor image = random_tensor({5, 6}, f.rng);
    const Tensor anchor = random_tensor(text.shape(), f.rng);
    const Tensor got = attention_stage(text, image, anchor, f.params.stages[0], f.cfg.dropout_p, false, f.rng);
    const auto want = oracle::attention_stage(oracle::to_mat(text), oracle::to_mat(image), oracle::to_mat(anchor),
                                              f.params.stages[0]);
    EXPECT_LT(oracle::max_abs_diff(want, got), 1e-10);
  }
}

TEST(Paf, EnhancedCrossMatchesDirectSummation) {
  for (bool self_bias : {true, false}) {
    Fixture f;
    f.cfg.use_self_bias = self_bias;
    const Tensor text = random_tensor({4, 6}, f.rng), image = random_tensor({6, 6}, f.rng);
    EnhancedCrossTrace trace;
    const Tensor got = enhanced_cross_attention(text, image, f.params.enhanced, f.cfg, false, f.rng, nullptr, &trace);
    const auto want = oracle::enhanced_cross(oracle::to_mat(text), oracle::to_mat(image), f.params.enhanced, f.cfg);
    EXPECT_LT(oracle::max_abs_diff(want.out, got), 1e-10);
    EXPECT_LT(oracle::max_abs_diff(want.fresh, trace.fresh), 1e-10);
    EXPECT_LT(oracle::max_abs_diff(want.pre_norm, trace.pre_norm), 1e-10);
  }
}

TEST(Paf, SelfBiasSwitchIgnoresTableWhenOff) {
  Fixture f;
  f.cfg.use_self_bias = false;
  const Tensor text = random_tensor({3, 6}, f.rng), image = random_tensor({4, 6}, f.rng);
  const Tensor before = enhanced_cross_attention(text, image, f.params.enhanced, f.cfg, false, f.rng);
  for (double& v : f.params.enhanced.self_bias.mutable_values()) v += 3.0 * f.rng.uniform();
  const Tensor after = enhanced_cross_attention(text, image, f.params.enhanced, f.cfg, false, f.rng);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(Paf, GatedResidualLimitsAreExact) {
  Rng rng(2);
  const Tensor fresh = random_tensor({3, 4}, rng), residual = random_tensor({3, 4}, rng);
  const Tensor zero = gated_residual(fresh, residual, Tensor::vector({0, 0, 0, 0}));
  const Tensor one = gated_residual(fresh, residual, Tensor::vector({1, 1, 1, 1}));
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    EXPECT_EQ(zero[i], residual[i]);
    EXPECT_EQ(one[i], fresh[i]);
  }
}

TEST(Paf, SaturatedGateSelectsPath) {
  Fixture f;
  const Tensor text = random_tensor({3, 6}, f.rng), image = random_tensor({4, 6}, f.rng);
  EnhancedCrossTrace trace;
  for (double& v : f.params.enhanced.gate.mutable_values()) v = -800.0;
  enhanced_cross_attention(text, image, f.params.enhanced, f.cfg, false, f.rng, nullptr, &trace);
  for (std::size_t i = 0; i < text.size(); ++i) EXPECT_EQ(trace.pre_norm[i], text[i]);
  for (double& v : f.params.enhanced.gate.mutable_values()) v = 800.0;
  enhanced_cross_attention(text, image, f.params.enhanced, f.cfg, false, f.rng, nullptr, &trace);
  for (std::size_t i = 0; i < text.size(); ++i) EXPECT_NEAR(trace.pre_norm[i], trace.fresh[i], 1e-15);
}

TEST(Paf, ForwardShapesProbesAndImagePassThrough) {
  Fixture f;
  const Tensor text = random_tensor({5, 5}, f.rng), image = random_tensor({7, 5}, f.rng);
  std::vector<AttentionProbe> probes;
  const PafOutput out = paf_forward(text, image, f.params, f.cfg, false, f.rng, &probes);
  EXPECT_EQ(out.text.shape(), (Shape{5, 6}));
  const ProjectedModalities projected = project_modalities(text, image, f.params);
  for (std::size_t i = 0; i < out.image.size(); ++i) EXPECT_EQ(out.image[i], projected.image[i]);
  // two single-head stages with self and cross maps, then 3 heads
  ASSERT_EQ(probes.size(), 7u);
  for (const auto& p : probes) {
    for (std::size_t r = 0; r < p.probs.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.probs.cols(); ++c) s += p.probs.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12) << p.label;
    }
  }
  EXPECT_EQ(probes.front().label, "stage1.self");
  EXPECT_EQ(probes.back().label, "stage3.head2");
}

TEST(Paf, SequencesLongerThanTableAreRejected) {
  Fixture f;
  const Tensor long_text = random_tensor({8, 5}, f.rng), image = random_tensor({3, 5}, f.rng);
  EXPECT_THROW(paf_forward(long_text, image, f.params, f.cfg, false, f.rng), LengthError);
  EXPECT_THROW(relative_bias_slice(f.params.enhanced.self_bias, 8, 2), LengthError);
}

TEST(Paf, DropoutOnlyInTraining) {
  Fixture f;
  const Tensor text = random_tensor({4, 5}, f.rng), image = random_tensor({5, 5}, f.rng);
  Rng a(1), b(2);
  const Tensor e1 = paf_forward(text, image, f.params, f.cfg, false, a).text;
  const Tensor e2 = paf_forward(text, image, f.params, f.cfg, false, b).text;
  const Tensor t1 = paf_forward(text, image, f.params, f.cfg, true, a).text;
  bool differs = false;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    EXPECT_EQ(e1[i], e2[i]);
    differs = differs || e1[i] != t1[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Paf, WidthMismatchIsADimensionError) {
  Fixture f;
  EXPECT_THROW(paf_forward(random_tensor({3, 4}, f.rng), random_tensor({3, 5}, f.rng), f.params, f.cfg, false, f.rng),
               DimensionError);
  PafConfig bad = f.cfg;
  bad.n_heads = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
}
