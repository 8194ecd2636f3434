#include <gtest/gtest.h>

#include <vector>

#include "clamp/encoders.hpp"
#include "clamp/gradcheck.hpp"

using namespace clamp;

namespace {

TextEncoderConfig small_text() {
  return {.vocab_size = 12, .d_model = 8, .n_layers = 2, .n_heads = 2, .max_len = 6, .dropout = 0.2};
}

ImageEncoderConfig small_image() {
  return {.image_h = 4, .image_w = 6, .channels = 2, .patch_size = 2, .d_model = 8, .n_layers = 1, .n_heads = 2,
          .dropout = 0.2};
}

PatchGrid counting_image(std::size_t h, std::size_t w, std::size_t c) {
  PatchGrid g{h, w, c, std::vector<double>(h * w * c)};
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<double>(i);
  return g;
}

}  // namespace

TEST(Patchify, RowMajorPatchesOfRowMajorPixels) {
  const PatchGrid img = counting_image(4, 6, 2);
  const Tensor p = patchify(img, 2);
  ASSERT_EQ(p.shape(), (Shape{6, 8}));
  for (std::size_t pr = 0; pr < 2; ++pr)
    for (std::size_t pc = 0; pc < 3; ++pc)
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t ch = 0; ch < 2; ++ch)
            EXPECT_EQ(p.at(pr * 3 + pc, (r * 2 + c) * 2 + ch), img.at(pr * 2 + r, pc * 2 + c, ch));
  EXPECT_THROW(patchify(img, 4), DimensionError);
}

TEST(Patchify, SinglePatchIsWholeImage) {
  const PatchGrid img = counting_image(3, 3, 1);
  const Tensor p = patchify(img, 3);
  ASSERT_EQ(p.shape(), (Shape{1, 9}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(p[i], static_cast<double>(i));
}

TEST(TextEncoder, ShapesAndInputChecks) {
  ParamSet ps;
  Rng rng(1);
  TextEncoder enc(small_text(), ps, rng);
  const std::vector<std::size_t> tokens = {1, 5, 11};
  EXPECT_EQ(enc(tokens, false, rng).shape(), (Shape{3, 8}));
  const std::vector<std::size_t> too_long(7, 1), empty, bad = {1, 12};
  EXPECT_THROW(enc(too_long, false, rng), LengthError);
  EXPECT_THROW(enc(empty, false, rng), LengthError);
  EXPECT_THROW(enc(bad, false, rng), DataError);
}

TEST(TextEncoder, EvalIsDeterministicTrainingIsNot) {
  ParamSet ps;
  Rng init(2);
  TextEncoder enc(small_text(), ps, init);
  const std::vector<std::size_t> tokens = {3, 4, 5, 6};
  Rng a(0), b(99);
  const Tensor x = enc(tokens, false, a), y = enc(tokens, false, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
  Rng c(0), d(99);
  const Tensor u = enc(tokens, true, c), v = enc(tokens, true, d);
  bool differs = false;
  for (std::size_t i = 0; i < u.size(); ++i) differs = differs || u[i] != v[i];
  EXPECT_TRUE(differs);
}

TEST(TextEncoder, PositionsMatter) {
  ParamSet ps;
  Rng rng(3);
  TextEncoder enc(small_text(), ps, rng);
  const std::vector<std::size_t> ab = {2, 7}, ba = {7, 2};
  const Tensor x = enc(ab, false, rng), y = enc(ba, false, rng);
  // swapping tokens does not simply swap output rows
  double diff = 0.0;
  for (std::size_t c = 0; c < 8; ++c) diff += std::abs(x.at(0, c) - y.at(1, c));
  EXPECT_GT(diff, 1e-6);
}

TEST(TextEncoder, ProbesAreRowStochastic) {
  ParamSet ps;
  Rng rng(4);
  TextEncoder enc(small_text(), ps, rng);
  std::vector<AttentionProbe> probes;
  const std::vector<std::size_t> tokens = {0, 1, 2, 3, 4};
  enc(tokens, false, rng, &probes);
  ASSERT_EQ(probes.size(), 4u);  // 2 layers x 2 heads
  for (const auto& p : probes) {
    ASSERT_EQ(p.probs.shape(), (Shape{5, 5}));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += p.probs.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(ImageEncoder, ClsRowAndGridCheck) {
  ParamSet ps;
  Rng rng(5);
  ImageEncoder enc(small_image(), ps, rng);
  const PatchGrid img = counting_image(4, 6, 2);
  EXPECT_EQ(enc(img, false, rng).shape(), (Shape{7, 8}));
  EXPECT_THROW(enc(counting_image(4, 4, 2), false, rng), DimensionError);
}

TEST(Encoders, OutputRowsAreLayerNormalised) {
  ParamSet ps;
  Rng rng(6);
  ImageEncoder enc(small_image(), ps, rng);
  const Tensor h = enc(counting_image(4, 6, 2), false, rng);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < h.cols(); ++c) mu += h.at(r, c);
    EXPECT_NEAR(mu / 8.0, 0.0, 1e-10);
  }
}

TEST(Encoders, FiniteDifferenceGradients) {
  ParamSet ps;
  Rng init(7);
  TextEncoder text(small_text(), ps, init);
  ImageEncoder image(small_image(), ps, init);
  PatchGrid img = counting_image(4, 6, 2);
  for (double& v : img.values) v = init.uniform(-1.0, 1.0);
  const std::vector<std::size_t> tokens = {1, 0, 9, 4};
  std::vector<double> rv(4 * 8), iv(7 * 8);
  for (double& v : rv) v = init.uniform(-1.0, 1.0);
  for (double& v : iv) v = init.uniform(-1.0, 1.0);
  const Tensor rt({4, 8}, rv), ri({7, 8}, iv);
  auto f = [&] {
    Rng drop(3);
    return add(sum(mul(text(tokens, true, drop), rt)), sum(mul(image(img, true, drop), ri)));
  };
  Rng rng(8);
  const auto report = grad_check(f, ps.named(), rng);
  EXPECT_TRUE(report.ok()) << "max error " << report.max_error;
  EXPECT_EQ(report.covered.size(), ps.items().size());
}

TEST(EncoderConfig, Validation) {
  auto t = small_text();
  t.n_heads = 3;
  EXPECT_THROW(t.validate(), ConfigError);
  auto i = small_image();
  i.patch_size = 4;
  EXPECT_THROW(i.validate(), ConfigError);
}
