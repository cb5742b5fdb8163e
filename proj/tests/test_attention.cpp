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

/// Triple-loop softmax(q k^T / sqrt(dk) + corr) v.
Matrix<double> loop_attention(const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v,
                              const Matrix<double>& corr, int dk) {
  const int n = int(q.rows()), m = int(k.rows());
  Matrix<double> out = Matrix<double>::Zero(n, v.cols());
  for (int i = 0; i < n; ++i) {
    std::vector<double> logit(m);
    double mx = -1e300;
    for (int j = 0; j < m; ++j) {
      double s = 0;
      for (int t = 0; t < q.cols(); ++t) s += q(i, t) * k(j, t);
      logit[j] = s / std::sqrt(double(dk)) + corr(i, j);
      mx = std::max(mx, logit[j]);
    }
    double z = 0;
    for (double& l : logit) z += (l = std::exp(l - mx));
    for (int j = 0; j < m; ++j)
      for (int t = 0; t < v.cols(); ++t) out(i, t) += logit[j] / z * v(j, t);
  }
  return out;
}

}  // namespace

TEST(Correlation, MatchesLoopOracle) {
  Rng rng(1);
  const auto h = random_matrix(7, 12, rng), w = random_matrix(12, 4, rng), k = random_matrix(7, 4, rng);
  const auto qbar = knowledge_query<double>(h, w);
  const auto corr = authenticity_correlation<double>(qbar, k, 4);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      double s = 0;
      for (int t = 0; t < 4; ++t) {
        double q = 0;
        for (int u = 0; u < 12; ++u) q += h(i, u) * w(u, t);
        s += q * k(j, t);
      }
      EXPECT_NEAR(corr(i, j), s / 2.0, 1e-12);
    }
}

TEST(Correlation, ZeroQueryGivesZeroMatrix) {
  Rng rng(2);
  const auto h = random_matrix(5, 8, rng), k = random_matrix(5, 4, rng);
  const auto corr = authenticity_correlation<double>(knowledge_query<double>(h, Matrix<double>::Zero(8, 4)), k, 4);
  EXPECT_EQ(corr.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Correlation, RejectsBadInput) {
  Matrix<double> q = Matrix<double>::Ones(3, 2), k = Matrix<double>::Ones(3, 2);
  EXPECT_THROW(authenticity_correlation<double>(q, k, 0), std::invalid_argument);
  EXPECT_THROW(authenticity_correlation<double>(q, Matrix<double>::Ones(3, 3), 2), ShapeError);
  EXPECT_THROW(knowledge_query<double>(q, Matrix<double>::Ones(3, 2)), ShapeError);
}

TEST(InjectedHead, MatchesLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto q = random_matrix(6, 4, rng), k = random_matrix(6, 4, rng), v = random_matrix(6, 4, rng);
    const auto corr = random_matrix(6, 6, rng);
    const auto got = injected_attention_head<double>(q, k, v, corr, 4);
    EXPECT_LT((got - loop_attention(q, k, v, corr, 4)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(InjectedHead, ZeroCorrelationEqualsStandardHead) {
  Rng rng(4);
  const auto q = random_matrix(5, 3, rng), k = random_matrix(5, 3, rng), v = random_matrix(5, 3, rng);
  EXPECT_EQ(injected_attention_head<double>(q, k, v, Matrix<double>::Zero(5, 5), 3), standard_attention_head(q, k, v, 3));
}

TEST(InjectedHead, NonFiniteLogitsRaise) {
  Matrix<double> q = Matrix<double>::Ones(2, 2), corr = Matrix<double>::Zero(2, 2);
  corr(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(injected_attention_head<double>(q, q, q, corr, 2), NumericalFault);
  EXPECT_THROW(injected_attention_head<double>(q, q, q, Matrix<double>::Zero(3, 2), 2), ShapeError);
}

TEST(AttentionBlock, ZeroQbarMatchesPlainBlock) {
  const auto cfg = tiny_config();
  auto w = random_weights<double>(cfg, 5);
  Rng rng(6);
  const auto x = random_matrix(cfg.num_tokens(), cfg.embed_dim, rng);
  for (auto& L : w.layers) L.w_qbar.setZero();
  const auto& L = w.layers[0];
  AttentionParams<double> inj{L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, &L.w_qbar};
  AttentionParams<double> plain{L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, nullptr};
  AttentionCache<double> c1, c2;
  AuthenticityCorrelation<double> corr;
  const auto a = attention_forward<double>(x, inj, cfg.num_heads, c1, &corr);
  const auto b = attention_forward<double>(x, plain, cfg.num_heads, c2, nullptr);
  EXPECT_EQ(a, b);
  ASSERT_EQ(int(corr.heads.size()), cfg.num_heads);
  EXPECT_EQ(activation_value(corr), 0.0);
}

TEST(AttentionBlock, PerHeadCorrelationMatchesOracle) {
  const auto cfg = tiny_config();
  const auto w = random_weights<double>(cfg, 7);
  Rng rng(8);
  const auto x = random_matrix(cfg.num_tokens(), cfg.embed_dim, rng);
  const auto& L = w.layers[1];
  AttentionParams<double> p{L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, &L.w_qbar};
  AttentionCache<double> cache;
  AuthenticityCorrelation<double> corr;
  const auto out = attention_forward<double>(x, p, cfg.num_heads, cache, &corr);
  const int dk = cfg.head_dim();
  const Matrix<double> k = linear(x, L.wk, L.bk), q = linear(x, L.wq, L.bq), v = linear(x, L.wv, L.bv);
  Matrix<double> concat(cfg.num_tokens(), cfg.embed_dim);
  for (int h = 0; h < cfg.num_heads; ++h) {
    const Matrix<double> qbar_h = knowledge_query<double>(x, L.w_qbar.middleCols(h * dk, dk));
    const Matrix<double> kh = k.middleCols(h * dk, dk);
    const auto expect = authenticity_correlation<double>(qbar_h, kh, dk);
    EXPECT_LT((corr.heads[h] - expect).cwiseAbs().maxCoeff(), 1e-12);
    concat.middleCols(h * dk, dk) =
        loop_attention(q.middleCols(h * dk, dk), kh, v.middleCols(h * dk, dk), expect, dk);
  }
  EXPECT_LT((out - linear(concat, L.wo, L.bo)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AttentionBlock, BackwardMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto w = random_weights<double>(cfg, 9);
  Rng rng(10);
  const auto x = random_matrix(cfg.num_tokens(), cfg.embed_dim, rng);
  const auto r = random_matrix(cfg.num_tokens(), cfg.embed_dim, rng);
  const auto& L = w.layers[0];
  auto loss_with = [&](const Matrix<double>& qbar) {
    AttentionParams<double> p{L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, &qbar};
    AttentionCache<double> c;
    return attention_forward<double>(x, p, cfg.num_heads, c, nullptr).cwiseProduct(r).sum();
  };
  AttentionParams<double> p{L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, &L.w_qbar};
  AttentionCache<double> c;
  attention_forward<double>(x, p, cfg.num_heads, c, nullptr);
  Weights<double> g = zeros_like(w);
  auto& G = g.layers[0];
  AttentionGrads<double> grads{G.wq, G.bq, G.wk, G.bk, G.wv, G.bv, G.wo, G.bo, G.w_qbar};
  const Matrix<double> dx = attention_backward<double>(r, p, cfg.num_heads, c, nullptr, grads);
  const auto fd = finite_difference(
      [&](const std::vector<double>& v) {
        Matrix<double> q = L.w_qbar;
        std::copy(v.begin(), v.end(), q.data());
        return loss_with(q);
      },
      to_vector(L.w_qbar));
  EXPECT_LT(relative_error(to_vector(G.w_qbar), fd), 1e-6);
  const auto fdx = finite_difference(
      [&](const std::vector<double>& v) {
        Matrix<double> xx = x;
        std::copy(v.begin(), v.end(), xx.data());
        AttentionCache<double> cc;
        return attention_forward<double>(xx, p, cfg.num_heads, cc, nullptr).cwiseProduct(r).sum();
      },
      to_vector(x));
  EXPECT_LT(relative_error(to_vector(dx), fdx), 1e-6);
}

TEST(Activation, MeanAbsoluteOverHeadsAndTokens) {
  AuthenticityCorrelation<double> corr;
  corr.heads = {Matrix<double>::Constant(3, 3, -2.0), Matrix<double>::Constant(3, 3, 1.0)};
  corr.heads[1](0, 0) = 4.0;
  EXPECT_DOUBLE_EQ(activation_value(corr), (18.0 + 8.0 + 4.0) / 18.0);
  const auto g = activation_value_grad(corr, 1.0);
  EXPECT_DOUBLE_EQ(g[0](1, 1), -1.0 / 18);
  EXPECT_DOUBLE_EQ(g[1](0, 0), 1.0 / 18);
  corr.heads[0](2, 2) = 0.0;
  EXPECT_EQ(activation_value_grad(corr, 1.0)[0](2, 2), 0.0);
}
