#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "shisr/losses.hpp"
#include "shisr/ops.hpp"

using namespace shisr;
using testutil::make;
using testutil::values;

TEST(L1, Examples) {
  Rng rng(1);
  const Tensor a = testutil::random({2, 3, 4, 4}, rng);
  EXPECT_EQ(l1_loss(a, a).item(), 0.0f);
  EXPECT_NEAR(l1_loss(add_scalar(a, 0.5), a).item(), 0.5, 1e-6);
  EXPECT_THROW(l1_loss(a, Tensor::zeros({2, 3, 4, 5})), ShapeError);
}

TEST(Focal, CrossEntropyLimitAndHalfProbability) {
  const std::vector<int> y{0};
  EXPECT_NEAR(focal_loss(make({1, 2, 1, 1}, {60, 0}), y, 0.0).item(), 0.0, 1e-12);
  const double half = focal_loss(make({1, 2, 1, 1}, {0.3, 0.3}), y, 2.0).item();
  EXPECT_NEAR(half, 0.25 * std::log(2.0), 1e-6);
  EXPECT_NEAR(half, 0.1733, 1e-4);
  // gamma = 0 reduces to cross-entropy.
  const std::vector<double> z{1.5, -0.5, 0.2};
  EXPECT_NEAR(focal_loss(make({1, 3, 1, 1}, z), y, 0.0).item(), -std::log(oracle::softmax(z)[0]),
              1e-6);
}

TEST(Focal, MatchesScalarOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = testutil::random({2, 8, 1, 1}, rng, -3, 3);
    const std::vector<int> y{rng.uniform_int(0, 7), rng.uniform_int(0, 7)};
    const double gamma = rng.uniform(0, 3);
    std::vector<double> alpha(8);
    for (double& a : alpha) a = rng.uniform(0.1, 2);
    EXPECT_NEAR(focal_loss(logits, y, gamma).item(), oracle::focal(values(logits), y, 8, gamma),
                1e-5);
    EXPECT_NEAR(focal_loss(logits, y, gamma, alpha).item(),
                oracle::focal(values(logits), y, 8, gamma, alpha), 1e-5);
  }
}

TEST(Focal, Errors) {
  const Tensor logits = Tensor::zeros({2, 8, 1, 1});
  const std::vector<int> bad{0, 8};
  EXPECT_THROW(focal_loss(logits, bad, 2.0), ShapeError);
  const std::vector<int> short_labels{0};
  EXPECT_THROW(focal_loss(logits, short_labels, 2.0), ShapeError);
}

TEST(NTXent, IdenticalViewsGiveLogTwoNMinusOne) {
  for (int n : {2, 3, 5}) {
    const Tensor z = Tensor::full({n, 4, 1, 1}, 0.7f);
    EXPECT_NEAR(nt_xent_loss(z, z, 0.5).item(), std::log(2.0 * n - 1), 1e-6) << n;
  }
  const Tensor z = Tensor::full({2, 3, 1, 1}, 1);
  EXPECT_NEAR(nt_xent_loss(z, z, 0.5).item(), 1.0986, 1e-4);
}

TEST(NTXent, MatchesScalarOracleAndIsSymmetric) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = trial % 2 == 0 ? 2 : 4;
    const int d = 8 / n;
    const Tensor a = testutil::random({n, d, 1, 1}, rng);
    const Tensor b = testutil::random({n, d, 1, 1}, rng);
    const double tau = rng.uniform(0.2, 1.0);
    const double got = nt_xent_loss(a, b, tau).item();
    EXPECT_NEAR(got, oracle::nt_xent(values(a), values(b), n, d, tau), 1e-5);
    EXPECT_NEAR(got, nt_xent_loss(b, a, tau).item(), 1e-6);
    EXPECT_GE(got, 0.0);
  }
}

TEST(NTXent, OrthonormalPairsAtLowTemperature) {
  const Tensor z = make({2, 2, 1, 1}, {1, 0, 0, 1});
  const double loss = nt_xent_loss(z, z, 0.05).item();
  EXPECT_LT(loss, 0.01);
  EXPECT_NEAR(loss, oracle::nt_xent(values(z), values(z), 2, 2, 0.05), 1e-6);
}

TEST(NTXent, Errors) {
  EXPECT_THROW(nt_xent_loss(Tensor::full({1, 2, 1, 1}, 1), Tensor::full({1, 2, 1, 1}, 1), 0.5),
               ShapeError);
  const Tensor z = make({2, 2, 1, 1}, {1, 0, 0, 0});
  EXPECT_THROW(nt_xent_loss(z, Tensor::full({2, 2, 1, 1}, 1), 0.5), NumericError);
}

TEST(TotalLoss, Examples) {
  LossWeights w;
  EXPECT_NEAR(total_loss(2, 1, 1, 0.5, w), 1.55, 1e-12);
  EXPECT_NEAR(total_loss(1, 1, 1, 1, w), 1.0, 1e-12);
  LossWeights only_l1;
  only_l1.l1 = 1;
  only_l1.focal = 0;
  only_l1.ntxent = 0;
  EXPECT_NEAR(total_loss(0.37, 5, 6, 7, only_l1), 0.37, 1e-12);

  const LossTerms terms{Tensor::scalar(2), Tensor::scalar(1), Tensor::scalar(1),
                        Tensor::scalar(0.5)};
  EXPECT_NEAR(total_loss(terms, w).item(), 1.55, 1e-6);
  LossWeights sum = w;
  sum.focal_combine = FocalCombine::Sum;
  EXPECT_NEAR(total_loss(terms, sum).item(), 0.6 * 2 + 0.3 * 2 + 0.1 * 0.5, 1e-6);
}

TEST(TotalLoss, LinearInEachComponent) {
  Rng rng(4);
  LossWeights w;
  for (int trial = 0; trial < 10; ++trial) {
    double c[4];
    for (double& v : c) v = rng.uniform(0, 3);
    const double base = total_loss(c[0], c[1], c[2], c[3], w);
    const double coeff[4] = {w.l1, w.focal / 2, w.focal / 2, w.ntxent};
    for (int k = 0; k < 4; ++k) {
      double d[4] = {c[0], c[1], c[2], c[3]};
      d[k] += 1.0;
      EXPECT_NEAR(total_loss(d[0], d[1], d[2], d[3], w) - base, coeff[k], 1e-12);
    }
  }
}

TEST(TotalLoss, Validation) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  LossWeights short_sum;
  short_sum.l1 = 0.5;
  EXPECT_THROW(short_sum.validate(), ConfigError);
  EXPECT_THROW(total_loss(NAN, 1, 1, 1, LossWeights{}), NumericError);
  EXPECT_THROW(total_loss(LossTerms{}, LossWeights{}), Error);
}
