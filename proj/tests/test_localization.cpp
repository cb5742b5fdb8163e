#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace kid;
using namespace kid::testing;

namespace {
Matrix<double> random_matrix(int r, int c, Rng& rng, double sd = 1.0) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng, 0.0, sd);
  return m;
}
}  // namespace

TEST(PositionEncoding, RowThenColumnChannels) {
  const auto pe = sinusoidal_position_encoding<double>(4, 8);
  ASSERT_EQ(pe.rows(), 16);
  ASSERT_EQ(pe.cols(), 8);
  // patch (r=2, c=3): channel 0 = sin(2), channel 1 = cos(2), channel 4 = sin(3)
  EXPECT_DOUBLE_EQ(pe(2 * 4 + 3, 0), std::sin(2.0));
  EXPECT_DOUBLE_EQ(pe(2 * 4 + 3, 1), std::cos(2.0));
  EXPECT_DOUBLE_EQ(pe(2 * 4 + 3, 4), std::sin(3.0));
  EXPECT_DOUBLE_EQ(pe(2 * 4 + 3, 2), std::sin(2.0 * std::pow(10000.0, -2.0 / 4)));
}

TEST(LocalizationUpdate, MatchesExplicitFormula) {
  Rng rng(1);
  const int n = 9, d = 6;
  const auto loc = random_matrix(n, d, rng), corr = random_matrix(n, n, rng), pe = random_matrix(n, d, rng);
  const auto w = random_matrix(d, d, rng);
  RowVector<double> gamma = RowVector<double>::Constant(d, 1.3), beta = RowVector<double>::Constant(d, -0.2);
  const auto got = update_localization_features<double>(loc, corr, pe, gamma, beta, w);
  // oracle: per-row layer norm, per-row softmax, two matrix products by loops
  Matrix<double> normed(n, d);
  for (int i = 0; i < n; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < d; ++j) mean += loc(i, j) + pe(i, j);
    mean /= d;
    for (int j = 0; j < d; ++j) var += std::pow(loc(i, j) + pe(i, j) - mean, 2);
    var /= d;
    for (int j = 0; j < d; ++j) normed(i, j) = (loc(i, j) + pe(i, j) - mean) / std::sqrt(var + kLayerNormEps) * 1.3 - 0.2;
  }
  for (int i = 0; i < n; ++i) {
    double z = 0;
    for (int j = 0; j < n; ++j) z += std::exp(corr(i, j));
    for (int c = 0; c < d; ++c) {
      double expect = 0;
      for (int j = 0; j < n; ++j)
        for (int t = 0; t < d; ++t) expect += std::exp(corr(i, j)) / z * normed(j, t) * w(t, c);
      EXPECT_NEAR(got(i, c), expect, 1e-10);
    }
  }
}

TEST(LocalizationUpdate, UniformRoutingWhenCorrelationIsZero) {
  Rng rng(2);
  const auto loc = random_matrix(4, 4, rng), pe = random_matrix(4, 4, rng), w = random_matrix(4, 4, rng);
  const auto out = update_localization_features<double>(loc, Matrix<double>::Zero(4, 4), pe, RowVector<double>::Ones(4),
                                                        RowVector<double>::Zero(4), w);
  for (int i = 1; i < 4; ++i) EXPECT_LT((out.row(i) - out.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LocalizationUpdate, RejectsShapeMismatch) {
  Matrix<double> loc = Matrix<double>::Zero(4, 3);
  EXPECT_THROW(update_localization_features<double>(loc, Matrix<double>::Zero(3, 3), Matrix<double>::Zero(4, 3),
                                                     RowVector<double>::Ones(3), RowVector<double>::Zero(3),
                                                     Matrix<double>::Zero(3, 3)),
               ShapeError);
}

TEST(CoarseLabels, ThresholdsAreStrict) {
  EXPECT_EQ(coarse_label(0.1, 0.2, 0.8), 0.0);
  EXPECT_EQ(coarse_label(0.2, 0.2, 0.8), 0.2);
  EXPECT_EQ(coarse_label(0.5, 0.2, 0.8), 0.5);
  EXPECT_EQ(coarse_label(0.8, 0.2, 0.8), 0.8);
  EXPECT_EQ(coarse_label(0.81, 0.2, 0.8), 1.0);
}

TEST(CoarseLabels, MatchPixelCounter) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    BinaryMask m(32, 32, 1);
    const double p = uniform(rng, 0, 1);
    for (auto& v : m.data) v = bernoulli(rng, p) ? 1 : 0;
    const auto labels = coarse_patch_labels(m, 8, 0.2, 0.8);
    ASSERT_EQ(labels.rows, 4);
    for (int pr = 0; pr < 4; ++pr)
      for (int pc = 0; pc < 4; ++pc) {
        int ones = 0;
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) ones += m.at(pc * 8 + x, pr * 8 + y);
        const double g = ones / 64.0;
        const double expect = g < 0.2 ? 0.0 : (g > 0.8 ? 1.0 : g);
        EXPECT_EQ(labels.labels[pr * 4 + pc], expect);
      }
  }
}

TEST(CoarseLabels, RejectsBadArguments) {
  BinaryMask m(16, 16, 1);
  EXPECT_THROW(coarse_patch_labels(m, 8, 0.8, 0.2), std::invalid_argument);
  EXPECT_THROW(coarse_patch_labels(m, 8, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(coarse_patch_labels(m, 5, 0.2, 0.8), ShapeError);
  const auto all_real = coarse_patch_labels(m, 8, 0.2, 0.8);
  for (double y : all_real.labels) EXPECT_EQ(y, 1.0);
}

TEST(Dice, PerfectBinaryPredictionIsZero) {
  Vector<double> p(4);
  p << 1, 0, 1, 0;
  EXPECT_DOUBLE_EQ(dice_loss<double>(p, {1, 0, 1, 0}, 1.0), 0.0);
  Vector<double> q(4);
  q << 0, 1, 0, 1;
  EXPECT_DOUBLE_EQ(dice_loss<double>(q, {1, 0, 1, 0}, 1.0), 1.0 - 1.0 / 5.0);
}

TEST(Dice, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto y = random_labels(10, rng);
    std::vector<double> p(10);
    for (auto& v : p) v = uniform(rng, 0.05, 0.95);
    Vector<double> pv = Eigen::Map<Vector<double>>(p.data(), 10), g;
    dice_loss<double>(pv, y, 1.0, &g);
    const auto fd = finite_difference(
        [&](const std::vector<double>& x) { return dice_loss<double>(Eigen::Map<const Vector<double>>(x.data(), 10), y, 1.0); },
        p);
    EXPECT_LT(relative_error(to_vector(g), fd), 1e-7);
  }
}

TEST(PatchHead, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  const auto loc = random_matrix(6, 4, rng), w1 = random_matrix(4, 4, rng), w2 = random_matrix(4, 1, rng);
  RowVector<double> b1 = random_matrix(1, 4, rng), b2 = random_matrix(1, 1, rng);
  Vector<double> up(6);
  for (int i = 0; i < 6; ++i) up(i) = normal(rng, 0.0, 1.0);
  PatchHeadCache<double> cache;
  const auto s = patch_prediction_head<double>(loc, w1, b1, w2, b2, &cache);
  for (int i = 0; i < 6; ++i) EXPECT_TRUE(s(i) > 0 && s(i) < 1);
  Matrix<double> gw1 = Matrix<double>::Zero(4, 4), gw2 = Matrix<double>::Zero(4, 1);
  RowVector<double> gb1 = RowVector<double>::Zero(4), gb2 = RowVector<double>::Zero(1);
  const Matrix<double> dloc = patch_head_backward<double>(up, w1, w2, cache, gw1, gb1, gw2, gb2);
  const auto fd = finite_difference(
      [&](const std::vector<double>& v) {
        Matrix<double> l = loc;
        std::copy(v.begin(), v.end(), l.data());
        return patch_prediction_head<double>(l, w1, b1, w2, b2).dot(up);
      },
      to_vector(loc));
  EXPECT_LT(relative_error(to_vector(dloc), fd), 1e-7);
}
