#include "test_util.hpp"

#include "kid/evaluation.hpp"
#include "kid/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace kid;
using namespace kid::testing;

namespace {

/// Fraction of (positive, negative) pairs ordered correctly, ties counted as half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0, total = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        total += 1;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return good / total;
}

}  // namespace

TEST(Auc, PerfectSeparationAndTies) {
  EXPECT_EQ(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  EXPECT_EQ(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
}

TEST(Auc, MatchesPairwiseCount) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + int(uniform(rng, 0, 40));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::round(uniform(rng, 0, 10)) / 10;  // coarse values force ties
      y[i] = bernoulli(rng, 0.5);
    }
    y[0] = 0, y[1] = 1;
    EXPECT_NEAR(auc(s, y), pairwise_auc(s, y), 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  std::vector<double> s(50), e(50);
  std::vector<int> y(50);
  for (int i = 0; i < 50; ++i) s[i] = uniform(rng, -2, 2), y[i] = i % 2;
  for (int i = 0; i < 50; ++i) e[i] = std::exp(3 * s[i]) + 7;
  EXPECT_DOUBLE_EQ(auc(s, y), auc(e, y));
}

TEST(Auc, RejectsDegenerateInput) {
  EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
  EXPECT_THROW(auc({0.1, 0.2}, {0, 2}), std::invalid_argument);
  EXPECT_THROW(auc({0.1}, {0, 1}), std::invalid_argument);
}

TEST(VideoScore, MeanOfSampledFrames) {
  Rng rng(3);
  EXPECT_DOUBLE_EQ(video_score(std::vector<double>(100, 0.25), 32, rng), 0.25);
  EXPECT_DOUBLE_EQ(video_score({0.1, 0.2, 0.6}, 32, rng), 0.3);
  std::vector<double> frames(1000);
  for (auto& f : frames) f = uniform(rng, 0, 1);
  const double full = std::accumulate(frames.begin(), frames.end(), 0.0) / 1000;
  EXPECT_NEAR(video_score(frames, 1000, rng), full, 1e-12);
  EXPECT_NEAR(video_score(frames, 500, rng), full, 0.05);
  EXPECT_THROW(video_score({}, 3, rng), std::invalid_argument);
  EXPECT_THROW(video_score({0.5}, 0, rng), std::invalid_argument);
}

TEST(VideoScore, AggregatesByGroupAndLabel) {
  EvalRecord rec;
  rec.aggregation = Aggregation::video;
  // one real video scored low on average, one fake video high on average,
  // although single frames overlap
  for (double s : {0.1, 0.2, 0.7}) rec.frame_scores.push_back({"r", std::string("v1"), s, 0});
  for (double s : {0.6, 0.9, 0.3}) rec.frame_scores.push_back({"f", std::string("v1"), s, 1});
  for (double s : {0.0, 0.1}) rec.frame_scores.push_back({"r2", std::string("v2"), s, 0});
  EXPECT_EQ(auc(rec), 1.0);
  rec.aggregation = Aggregation::frame;
  EXPECT_LT(auc(rec), 1.0);
}

TEST(PatchActivation, RowMeanOracle) {
  Matrix<double> c(3, 3);
  c << 1, -2, 3, 0, 0, -6, 1, 1, 1;
  EXPECT_EQ(patch_activation(c), (std::vector<double>{2, 2, 1}));
  EXPECT_EQ(patch_activation(c, PatchActivationMode::column), (std::vector<double>{2.0 / 3, 1, 10.0 / 3}));
  EXPECT_THROW(parse_patch_activation_mode("diagonal"), std::invalid_argument);
  EXPECT_THROW(patch_activation(Matrix<double>::Zero(2, 3)), ShapeError);
}

TEST(CorrelationViz, ShapesAndZeroQuery) {
  const auto cfg = tiny_config();
  auto w = random_weights<double>(cfg, 4);
  Rng rng(5);
  const auto img = random_image(cfg.image_size, rng);
  const auto v = correlation_viz(w, img, 1);
  EXPECT_EQ(v.correlation.rows(), cfg.num_tokens());
  EXPECT_EQ(int(v.patch_activation.size()), cfg.num_patches());
  EXPECT_EQ(v.grid, cfg.grid());
  for (auto& L : w.layers) L.w_qbar.setZero();
  const auto z = correlation_viz(w, img, 0);
  for (double a : z.patch_activation) EXPECT_EQ(a, 0.0);
  EXPECT_THROW(correlation_viz(w, img, cfg.num_layers), std::invalid_argument);
  EXPECT_THROW(correlation_viz(w, img, -1), std::invalid_argument);
  const auto dir = std::filesystem::temp_directory_path() / "kid_test_viz";
  std::filesystem::create_directories(dir);
  write_correlation_viz(v, (dir / "v").string());
  for (const char* s : {"_corr.png", "_corr.csv", "_patch.png", "_patch.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string("v") + s))) << s;
}

TEST(ActivationReport, ZeroQueryAndLayout) {
  const auto cfg = tiny_config();
  auto w = random_weights<double>(cfg, 6);
  for (auto& L : w.layers) L.w_qbar.setZero();
  const auto samples = toy_face_dataset(3, 7, cfg.image_size);
  auto all = with_fixed_fakes(samples, 8);
  const auto r = layerwise_activation_report(w, all);
  ASSERT_EQ(r.layer_count(), cfg.num_layers);
  for (int l = 0; l < cfg.num_layers; ++l) {
    EXPECT_EQ(r.real_mean[l], 0.0);
    EXPECT_EQ(r.fake_std[l], 0.0);
  }
  const auto nz = layerwise_activation_report(random_weights<double>(cfg, 9), all);
  for (int l = 0; l < cfg.num_layers; ++l) EXPECT_GT(nz.real_mean[l], 0.0);
}

TEST(Pca, RecoversLowRankStructure) {
  Rng rng(10);
  const int n = 60, f = 6;
  Matrix<double> basis(2, f), coeff(n, 2);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = normal(rng);
  for (int i = 0; i < n; ++i) coeff(i, 0) = normal(rng, 0, 5), coeff(i, 1) = normal(rng, 0, 1);
  RowVector<double> offset = RowVector<double>::Constant(f, 3.0);
  const Matrix<double> x = (coeff * basis).rowwise() + offset;
  const auto p = pca(x, 2);
  const Matrix<double> recon = (p.coords * p.axes.transpose()).rowwise() + p.mean;
  EXPECT_LT((recon - x).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GE(p.variances[0], p.variances[1]);
  EXPECT_NEAR((p.axes.transpose() * p.axes - Matrix<double>::Identity(2, 2)).cwiseAbs().maxCoeff(), 0, 1e-10);
  // variances equal the coordinate variances
  for (int k = 0; k < 2; ++k) {
    const double var = p.coords.col(k).squaredNorm() / (n - 1);
    EXPECT_NEAR(var, p.variances[k], 1e-8);
  }
}

TEST(Pca, RotationLeavesVariancesUnchanged) {
  Rng rng(11);
  Matrix<double> x(40, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng) * (1 + i % 3);
  const Eigen::Matrix3d q = Eigen::Quaterniond(0.3, 0.5, -0.2, 0.7).normalized().toRotationMatrix();
  const Matrix<double> rotated = x * q.transpose();
  const auto a = pca(x, 2), b = pca(rotated, 2);
  EXPECT_NEAR(a.variances[0], b.variances[0], 1e-9);
  EXPECT_NEAR(a.variances[1], b.variances[1], 1e-9);
}

TEST(Pca, DuplicatedRowsAndBadArguments) {
  Matrix<double> x(4, 3);
  x << 1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6;
  const auto p = pca(x, 1);
  EXPECT_NEAR(p.coords(0, 0), p.coords(1, 0), 1e-12);
  EXPECT_NEAR(p.coords(0, 0), -p.coords(2, 0), 1e-12);
  EXPECT_THROW(pca(x, 4), std::invalid_argument);
  EXPECT_THROW(pca(x.topRows(1), 2), std::invalid_argument);
}

TEST(Robustness, TableShapeAndCleanColumn) {
  const auto cfg = tiny_config();
  const auto w = random_weights<double>(cfg, 12, 0.3);
  const auto set = with_fixed_fakes(toy_face_dataset(4, 13, cfg.image_size), 14);
  const auto t = robustness_sweep(w, set, AttentionMode::injected, 3);
  ASSERT_EQ(t.kinds.size(), 5u);
  for (const auto& row : t.auc) {
    ASSERT_EQ(row.size(), 6u);
    EXPECT_EQ(row[0], t.clean);
    for (double a : row) EXPECT_TRUE(a >= 0 && a <= 1);
  }
  EXPECT_EQ(t.clean, auc_of(score_samples(w, set, AttentionMode::injected)));
  const auto again = robustness_sweep(w, set, AttentionMode::injected, 3);
  EXPECT_EQ(again.auc, t.auc);
}

TEST(Plot, HeatmapAndCharts) {
  const auto img = render_heatmap({0, 1, 2, 3}, 2, 2, 4);
  EXPECT_EQ(img.width, 8);
  EXPECT_EQ(img.height, 8);
  const auto lo = colormap(0), hi = colormap(1);
  EXPECT_FLOAT_EQ(img.at(0, 0, 0), lo[0]);
  EXPECT_FLOAT_EQ(img.at(7, 7, 2), hi[2]);
  EXPECT_THROW(render_heatmap({0, 1}, 2, 2), std::invalid_argument);
  const auto chart = line_plot({{"a", {0, 1, 2}, {1, 0.5, 0.25}}, {"b", {0, 2}, {0, 1}}}, 200, 100);
  EXPECT_EQ(chart.width, 200);
  const auto sc = scatter_plot({{"a", {0, 1}, {0, 1}}}, 100, 100);
  EXPECT_EQ(sc.height, 100);
}
