#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "lccal/attention.hpp"
#include "lccal/params.hpp"
#include "lccal/sampling.hpp"

namespace lccal {
namespace {

using testing::TapeD;
using testing::TensorD;
using testing::VarD;

TEST(Ops, Relu) {
  TapeD tape;
  const VarD x = tape.variable(TensorD(ad::Shape{3}, {-1, 0, 2}));
  EXPECT_EQ(ad::relu(x).value().to_vector(), (std::vector<double>{0, 0, 2}));
}

TEST(Ops, ConvAllOnes) {
  TapeD tape;
  const VarD x = tape.constant(TensorD(ad::Shape{1, 1, 3, 3}, 1.0));
  const VarD w = tape.constant(TensorD(ad::Shape{1, 1, 3, 3}, 1.0));
  const VarD y = ad::conv2d(x, w, static_cast<const VarD*>(nullptr), ad::Conv2dOptions{1, 0});
  EXPECT_EQ(y.shape(), (ad::Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value().item(), 9.0);
}

TEST(Ops, ConvMatchesDirectLoops) {
  std::mt19937_64 rng(1);
  const TensorD x = testing::random_tensor({2, 3, 7, 6}, rng);
  const TensorD w = testing::random_tensor({4, 3, 3, 3}, rng);
  const TensorD b = testing::random_tensor({4}, rng);
  for (int stride : {1, 2}) {
    TapeD tape;
    const VarD y = ad::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), ad::Conv2dOptions{stride, 1});
    const int ho = (7 + 2 - 3) / stride + 1, wo = (6 + 2 - 3) / stride + 1;
    ASSERT_EQ(y.shape(), (ad::Shape{2, 4, ho, wo}));
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            double s = b[static_cast<std::size_t>(o)];
            for (int c = 0; c < 3; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const int yy = i * stride + ki - 1, xx = j * stride + kj - 1;
                  if (yy < 0 || yy >= 7 || xx < 0 || xx >= 6) continue;
                  s += x[static_cast<std::size_t>(((n * 3 + c) * 7 + yy) * 6 + xx)] *
                       w[static_cast<std::size_t>(((o * 3 + c) * 3 + ki) * 3 + kj)];
                }
            EXPECT_NEAR(y.value()[static_cast<std::size_t>(((n * 4 + o) * ho + i) * wo + j)], s, 1e-12);
          }
  }
}

TEST(Ops, SoftmaxSymmetric) {
  TapeD tape;
  const VarD y = ad::softmax_last_dim(tape.constant(TensorD(ad::Shape{2}, {0, 0})));
  EXPECT_EQ(y.value().to_vector(), (std::vector<double>{0.5, 0.5}));
}

TEST(Ops, SoftmaxStableForLargeLogits) {
  TapeD tape;
  const VarD y = ad::softmax_last_dim(tape.constant(TensorD(ad::Shape{1, 3}, {1000, 1000, -1000})));
  EXPECT_NEAR(y.value()[0], 0.5, 1e-15);
  EXPECT_EQ(y.value()[2], 0.0);
}

TEST(Ops, LayerNormZeroMeanUnitVariance) {
  TapeD tape;
  const VarD y = ad::layer_norm_last_dim(tape.constant(TensorD(ad::Shape{2, 4}, {1, 2, 3, 4, -5, 0, 5, 10})), 0.0);
  for (int r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (int c = 0; c < 4; ++c) m += y.value()[static_cast<std::size_t>(r * 4 + c)] / 4;
    for (int c = 0; c < 4; ++c) v += std::pow(y.value()[static_cast<std::size_t>(r * 4 + c)] - m, 2) / 4;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  TapeD tape;
  const VarD x = tape.variable(TensorD(ad::Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto g = tape.backward(ad::sum(x));
  EXPECT_EQ(g[x].to_vector(), std::vector<double>(6, 1.0));
}

TEST(Backward, SumOfSquares) {
  TapeD tape;
  const VarD x = tape.variable(TensorD(ad::Shape{3}, {1, 2, 3}));
  const auto g = tape.backward(ad::sum(ad::mul(x, x)));
  EXPECT_EQ(g[x].to_vector(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ReusedNodeAccumulates) {
  TapeD tape;
  const VarD x = tape.variable(TensorD(ad::Shape{2}, {3, -1}));
  const VarD y = ad::add(ad::scalar_mul(x, 2.0), ad::mul(x, x));
  const auto g = tape.backward(ad::sum(y));
  EXPECT_EQ(g[x].to_vector(), (std::vector<double>{8, 0}));
}

TEST(Backward, ConstantsGetNoGradient) {
  TapeD tape;
  const VarD c = tape.constant(TensorD(ad::Shape{2}, {1, 2}));
  const VarD x = tape.variable(TensorD(ad::Shape{2}, {3, 4}));
  const auto g = tape.backward(ad::sum(ad::mul(c, x)));
  EXPECT_EQ(g[x].to_vector(), (std::vector<double>{1, 2}));
  EXPECT_FALSE(g.contains(c.id()));
}

TEST(Backward, NonScalarLossRejected) {
  TapeD tape;
  const VarD x = tape.variable(TensorD(ad::Shape{2}, {1, 2}));
  EXPECT_THROW(tape.backward(x), InvalidArgument);
}

TEST(Ops, ShapeMismatchesThrow) {
  TapeD tape;
  const VarD a = tape.constant(TensorD(ad::Shape{2, 3}));
  const VarD b = tape.constant(TensorD(ad::Shape{3, 2}));
  EXPECT_THROW(ad::add(a, b), ShapeError);
  EXPECT_THROW(ad::matmul(a, a), ShapeError);
  EXPECT_THROW(ad::conv2d(a, a, static_cast<const VarD*>(nullptr)), ShapeError);
}

TensorD ramp_image() {
  // [1, 2, 3]: row 0 = 2 4 6, row 1 = 10 20 30
  return TensorD(ad::Shape{1, 2, 3}, {2, 4, 6, 10, 20, 30});
}

TEST(Bilinear, PixelCenterReturnsPixel) {
  TapeD tape;
  const VarD img = tape.constant(ramp_image());
  const VarD uv = tape.constant(TensorD(ad::Shape{2, 2}, {1.5, 0.5, 2.5, 1.5}));
  const VarD s = ad::bilinear_sample(img, uv);
  EXPECT_EQ(s.value()[0], 4.0);
  EXPECT_EQ(s.value()[1], 30.0);
}

TEST(Bilinear, MidpointInterpolatesAndGradient) {
  TapeD tape;
  const VarD img = tape.constant(ramp_image());
  const VarD uv = tape.variable(TensorD(ad::Shape{1, 2}, {1.0, 0.5}));
  const VarD s = ad::bilinear_sample(img, uv);
  EXPECT_EQ(s.value().item(), 3.0);
  const auto g = tape.backward(ad::sum(s));
  EXPECT_NEAR(g[uv][0], 2.0, 2.0 * 1e-4);
  const double h = 1e-4;
  auto at = [&](double u) {
    TapeD t;
    return ad::bilinear_sample(t.constant(ramp_image()), t.constant(TensorD(ad::Shape{1, 2}, {u, 0.5}))).value().item();
  };
  EXPECT_NEAR(g[uv][0], (at(1.0 + h) - at(1.0 - h)) / (2 * h), 1e-4 * 2.0);
}

TEST(Bilinear, ChannelsSampledIndependently) {
  TapeD tape;
  const VarD img = tape.constant(TensorD(ad::Shape{1, 2, 1, 2}, {0, 8, 100, 200}));
  const VarD s = ad::bilinear_sample(img, tape.constant(TensorD(ad::Shape{1, 2}, {1.25, 0.5})));
  EXPECT_EQ(s.shape(), (ad::Shape{1, 2}));
  EXPECT_DOUBLE_EQ(s.value()[0], 6.0);
  EXPECT_DOUBLE_EQ(s.value()[1], 175.0);
}

class AttentionFixture : public ::testing::Test {
 protected:
  static constexpr int kDim = 4;
  ad::ParameterSet<double> params;
  std::mt19937_64 rng{2};

  void SetUp() override { ad::add_attention_block_params(params, "blk", kDim, 6, rng); }

  void make_value_identity_and_zero_ffn() {
    for (const char* n : {"blk.cross.v", "blk.cross.o"}) {
      auto& w = params.get(std::string(n) + ".weight");
      w.fill(0.0);
      for (int i = 0; i < kDim; ++i) w[static_cast<std::size_t>(i * kDim + i)] = 1.0;
      params.get(std::string(n) + ".bias").fill(0.0);
    }
    for (const char* n : {"blk.self.o", "blk.ffn2"}) {
      params.get(std::string(n) + ".weight").fill(0.0);
      params.get(std::string(n) + ".bias").fill(0.0);
    }
  }
};

TEST_F(AttentionFixture, SingleKeyAddsFeature) {
  make_value_identity_and_zero_ffn();
  TapeD tape;
  const ad::BoundParameters<double> p(tape, params);
  const TensorD q = testing::random_tensor({1, 3, kDim}, rng);
  const TensorD f = testing::random_tensor({1, 1, kDim}, rng);
  const VarD out = ad::attention_block(p, "blk", tape.constant(q), tape.constant(f));
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < kDim; ++c)
      EXPECT_NEAR(out.value()[static_cast<std::size_t>(i * kDim + c)],
                  q[static_cast<std::size_t>(i * kDim + c)] + f[static_cast<std::size_t>(c)], 1e-12);
}

TEST_F(AttentionFixture, FeatureOrderDoesNotMatter) {
  const TensorD q = testing::random_tensor({1, 2, kDim}, rng);
  const TensorD f = testing::random_tensor({1, 5, kDim}, rng);
  TensorD g(f.shape());
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < kDim; ++c) g[static_cast<std::size_t>(i * kDim + c)] = f[static_cast<std::size_t>(perm[i] * kDim + c)];
  TapeD tape;
  const ad::BoundParameters<double> p(tape, params);
  const VarD a = ad::attention_block(p, "blk", tape.constant(q), tape.constant(f));
  const VarD b = ad::attention_block(p, "blk", tape.constant(q), tape.constant(g));
  for (std::size_t i = 0; i < a.value().size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-12);
}

TEST_F(AttentionFixture, SmallInstanceGradient) {
  const auto r = testing::grad_check(
      [&](TapeD& tape, const std::vector<VarD>& in) {
        const ad::BoundParameters<double> p(tape, params);
        return testing::project_to_scalar(ad::attention_block(p, "blk", in[0], in[1]), 4);
      },
      {testing::random_tensor({1, 2, kDim}, rng), testing::random_tensor({1, 3, kDim}, rng)});
  EXPECT_LE(r.max_elementwise, 1e-4) << r.worst;
}

}  // namespace
}  // namespace lccal
