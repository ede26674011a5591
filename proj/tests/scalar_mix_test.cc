#include "spanprobe/scalar_mix.h"

#include <random>

#include <gtest/gtest.h>

#include "spanprobe/errors.h"
#include "test_util.h"

namespace spanprobe {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using testing::RandomLayers;
using testing::RandomMatrix;
using testing::RandomVector;

TEST(ScalarMix, EqualLogitsAverage) {
  const ScalarMix mix(2);
  LayerStack layers{MatrixXd(3, 2), MatrixXd(3, 2)};
  layers[0].rowwise() = Eigen::RowVector2d(2, 0);
  layers[1].rowwise() = Eigen::RowVector2d(0, 2);
  const MatrixXd out = mix.Forward(layers, VectorXd::Zero(2));
  EXPECT_EQ(out, MatrixXd::Ones(3, 2));
}

TEST(ScalarMix, SaturatedLogitSelectsLayer) {
  std::mt19937_64 rng(1);
  const LayerStack layers = RandomLayers(2, 4, 3, rng);
  VectorXd logits(2);
  logits << 50, 0;
  const MatrixXd out = ScalarMix(2).Forward(layers, logits);
  EXPECT_LT((out - layers[0]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ScalarMix, UniformThirteenLayers) {
  const ScalarMix mix(13, MixMode::kUniform);
  std::mt19937_64 rng(2);
  const VectorXd w = mix.Weights(RandomVector(13, rng, 5.0));
  for (int l = 0; l < 13; ++l) EXPECT_EQ(w[l], 1.0 / 13);
}

TEST(ScalarMix, UniformHasZeroLogitGradient) {
  std::mt19937_64 rng(3);
  const ScalarMix mix(4, MixMode::kUniform);
  const LayerStack layers = RandomLayers(4, 5, 3, rng);
  MixCache cache;
  mix.Forward(layers, RandomVector(4, rng), &cache);
  const MixGradient g = mix.Backward(layers, cache, RandomMatrix(5, 3, rng));
  EXPECT_EQ(g.logits, VectorXd::Zero(4));
}

TEST(ScalarMix, SingleLayerPassThrough) {
  std::mt19937_64 rng(4);
  const ScalarMix mix(1);
  const LayerStack layers = RandomLayers(1, 3, 2, rng);
  MixCache cache;
  EXPECT_EQ(mix.Forward(layers, VectorXd::Zero(1), &cache), layers[0]);
  const MatrixXd up = RandomMatrix(3, 2, rng);
  const MixGradient g = mix.Backward(layers, cache, up);
  EXPECT_EQ(g.layers[0], up);
  EXPECT_EQ(g.logits, VectorXd::Zero(1));
}

TEST(ScalarMix, ShapeMismatch) {
  std::mt19937_64 rng(5);
  const ScalarMix mix(2);
  LayerStack bad{RandomMatrix(3, 2, rng), RandomMatrix(4, 2, rng)};
  EXPECT_THROW(mix.Forward(bad, VectorXd::Zero(2)), ShapeError);
  const LayerStack three = RandomLayers(3, 2, 2, rng);
  EXPECT_THROW(mix.Forward(three, VectorXd::Zero(2)), ShapeError);
  EXPECT_THROW(mix.Forward(RandomLayers(2, 2, 2, rng), VectorXd::Zero(3)), ShapeError);
}

TEST(ScalarMix, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const int L = 1 + rng() % 5;
    LayerStack layers = RandomLayers(L, 4, 3, rng);
    VectorXd logits = RandomVector(L, rng, 2.0);
    const MatrixXd up = RandomMatrix(4, 3, rng);
    const ScalarMix mix(L);
    MixCache cache;
    mix.Forward(layers, logits, &cache);
    const MixGradient g = mix.Backward(layers, cache, up);
    const auto loss = [&] { return (mix.Forward(layers, logits).array() * up.array()).sum(); };
    for (int l = 0; l < L; ++l) {
      const double num = testing::CentralDifference(loss, &logits[l], 1e-5);
      worst = std::max(worst, testing::RelErr(g.logits[l], num, 1e-4));
      for (Eigen::Index i = 0; i < layers[l].size(); ++i) {
        const double n2 = testing::CentralDifference(loss, &layers[l].data()[i], 1e-5);
        worst = std::max(worst, testing::RelErr(g.layers[l].data()[i], n2, 1e-4));
      }
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(ScalarMixProperty, WeightsAreDistribution) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const int L = 1 + rng() % 25;
    const VectorXd w = ScalarMix(L).Weights(RandomVector(L, rng, 20.0));
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_GE(w.minCoeff(), 0.0);
    EXPECT_LE(w.maxCoeff(), 1.0);
    EXPECT_TRUE(w.allFinite());
  }
}

TEST(ScalarMixProperty, LinearInLayers) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 1 + rng() % 5;
    const ScalarMix mix(L);
    const VectorXd logits = RandomVector(L, rng);
    const LayerStack a = RandomLayers(L, 3, 4, rng);
    const LayerStack b = RandomLayers(L, 3, 4, rng);
    const double alpha = RandomVector(1, rng)[0];
    const double beta = RandomVector(1, rng)[0];
    LayerStack combined;
    for (int l = 0; l < L; ++l) combined.push_back(alpha * a[l] + beta * b[l]);
    const MatrixXd lhs = mix.Forward(combined, logits);
    const MatrixXd rhs = alpha * mix.Forward(a, logits) + beta * mix.Forward(b, logits);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ScalarMixProperty, OneHotWeightsReturnLayerExactly) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int L = 2 + rng() % 6;
    const int chosen = rng() % L;
    const LayerStack layers = RandomLayers(L, 3, 5, rng);
    const ScalarMix mix = ScalarMix::WithFixedWeights(VectorXd::Unit(L, chosen));
    EXPECT_EQ(mix.Forward(layers, VectorXd::Zero(L)), layers[chosen]);
  }
}

TEST(ScalarMix, ParseMode) {
  EXPECT_EQ(ParseMixMode("learned"), MixMode::kLearned);
  EXPECT_EQ(ParseMixMode("uniform"), MixMode::kUniform);
  EXPECT_THROW(ParseMixMode("fixed"), ConfigError);
}

}  // namespace
}  // namespace spanprobe
