#pragma once
// Injection multi-head self-attention: frozen QKV attention plus a trainable
// knowledge-query projection whose correlation with the keys is added to the
// attention logits before the softmax.

#include "kid/layers.hpp"

#include <optional>
#include <vector>

namespace kid {

/// Per-head (1+N)x(1+N) correlation matrices injected into one layer.
template <class T>
struct AuthenticityCorrelation {
  std::vector<Matrix<T>> heads;
  int layer_index = 0;

  Eigen::Index tokens() const { return heads.empty() ? 0 : heads.front().rows(); }

  Matrix<T> head_average() const {
    Matrix<T> avg = Matrix<T>::Zero(tokens(), tokens());
    for (const auto& h : heads) avg += h;
    if (!heads.empty()) avg /= T(heads.size());
    return avg;
  }

  /// Head-averaged patch-to-patch block (class token row and column dropped).
  Matrix<T> patch_block() const {
    const Eigen::Index n = tokens() - 1;
    return head_average().bottomRightCorner(n, n);
  }
};

/// Qbar = H * W, one d_k-row per token.
template <class T>
Matrix<T> knowledge_query(const Matrix<T>& h, const Matrix<T>& w_qbar_head) {
  require_shape(h.cols() == w_qbar_head.rows(), "knowledge_query: feature width does not match projection input");
  return h * w_qbar_head;
}

/// Qbar * K^T / sqrt(d_k).
template <class T>
Matrix<T> authenticity_correlation(const Matrix<T>& qbar, const Matrix<T>& k, int d_k) {
  if (d_k <= 0) throw std::invalid_argument("authenticity_correlation: d_k must be positive");
  require_shape(qbar.rows() == k.rows() && qbar.cols() == k.cols(),
                "authenticity_correlation: Qbar and K must have equal shapes");
  return (qbar * k.transpose()) / std::sqrt(T(d_k));
}

/// softmax(Q K^T / sqrt(d_k) + corr) V.
template <class T>
Matrix<T> injected_attention_head(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, const Matrix<T>& corr,
                                  int d_k) {
  require_shape(q.cols() == k.cols() && k.rows() == v.rows(), "injected_attention_head: inconsistent Q/K/V");
  require_shape(corr.rows() == q.rows() && corr.cols() == k.rows(), "injected_attention_head: corr shape != QK^T");
  Matrix<T> logits = (q * k.transpose()) / std::sqrt(T(d_k)) + corr;
  if (!logits.allFinite()) throw NumericalFault("injected_attention_head: non-finite logits", -1);
  return softmax_rows(logits) * v;
}

template <class T>
Matrix<T> standard_attention_head(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int d_k) {
  return injected_attention_head<T>(q, k, v, Matrix<T>::Zero(q.rows(), k.rows()), d_k);
}

/// Parameters of one attention block. `w_qbar` is null for the plain ViT block.
template <class T>
struct AttentionParams {
  const Matrix<T>& wq;
  const RowVector<T>& bq;
  const Matrix<T>& wk;
  const RowVector<T>& bk;
  const Matrix<T>& wv;
  const RowVector<T>& bv;
  const Matrix<T>& wo;
  const RowVector<T>& bo;
  const Matrix<T>* w_qbar;
};

template <class T>
struct AttentionGrads {
  Matrix<T>& wq;
  RowVector<T>& bq;
  Matrix<T>& wk;
  RowVector<T>& bk;
  Matrix<T>& wv;
  RowVector<T>& bv;
  Matrix<T>& wo;
  RowVector<T>& bo;
  Matrix<T>& w_qbar;
};

template <class T>
struct AttentionCache {
  Matrix<T> x;  // block input (already normalized)
  Matrix<T> q, k, v, qbar, concat;
  std::vector<Matrix<T>> probs;  // per-head softmax output
  bool injected = false;
};

/// Multi-head forward. Fills `corr` (per-head correlation) when injected.
template <class T>
Matrix<T> attention_forward(const Matrix<T>& x, const AttentionParams<T>& p, int num_heads, AttentionCache<T>& cache,
                            AuthenticityCorrelation<T>* corr) {
  const Eigen::Index tokens = x.rows(), d = x.cols();
  const int dk = static_cast<int>(d / num_heads);
  const T scale = T(1) / std::sqrt(T(dk));
  cache.injected = p.w_qbar != nullptr;
  cache.x = x;
  cache.q = linear(x, p.wq, p.bq);
  cache.k = linear(x, p.wk, p.bk);
  cache.v = linear(x, p.wv, p.bv);
  if (cache.injected) cache.qbar = x * *p.w_qbar;
  cache.concat.resize(tokens, d);
  cache.probs.resize(num_heads);
  if (corr) corr->heads.resize(cache.injected ? num_heads : 0);
  for (int h = 0; h < num_heads; ++h) {
    auto qh = cache.q.middleCols(h * dk, dk);
    auto kh = cache.k.middleCols(h * dk, dk);
    auto vh = cache.v.middleCols(h * dk, dk);
    Matrix<T> logits = (qh * kh.transpose()) * scale;
    if (cache.injected) {
      Matrix<T> c = (cache.qbar.middleCols(h * dk, dk) * kh.transpose()) * scale;
      logits += c;
      if (corr) corr->heads[h] = std::move(c);
    }
    cache.probs[h] = softmax_rows(logits);
    cache.concat.middleCols(h * dk, dk) = cache.probs[h] * vh;
  }
  return linear(cache.concat, p.wo, p.bo);
}

/// Backward through the block. `dcorr_extra` carries gradients that reach the
/// correlation matrices from outside the attention (localization branch,
/// regularizers); it may be null.
template <class T>
Matrix<T> attention_backward(const Matrix<T>& dout, const AttentionParams<T>& p, int num_heads,
                             const AttentionCache<T>& cache, const std::vector<Matrix<T>>* dcorr_extra,
                             AttentionGrads<T>& g) {
  const Eigen::Index tokens = cache.x.rows(), d = cache.x.cols();
  const int dk = static_cast<int>(d / num_heads);
  const T scale = T(1) / std::sqrt(T(dk));

  g.wo.noalias() += cache.concat.transpose() * dout;
  g.bo += dout.colwise().sum();
  Matrix<T> dconcat = dout * p.wo.transpose();

  Matrix<T> dq(tokens, d), dk_(tokens, d), dv(tokens, d), dqbar;
  if (cache.injected) dqbar.resize(tokens, d);
  for (int h = 0; h < num_heads; ++h) {
    auto qh = cache.q.middleCols(h * dk, dk);
    auto kh = cache.k.middleCols(h * dk, dk);
    auto vh = cache.v.middleCols(h * dk, dk);
    const Matrix<T>& prob = cache.probs[h];
    Matrix<T> doh = dconcat.middleCols(h * dk, dk);
    Matrix<T> dprob = doh * vh.transpose();
    dv.middleCols(h * dk, dk) = prob.transpose() * doh;
    Matrix<T> dlogits = softmax_rows_backward(dprob, prob);
    dq.middleCols(h * dk, dk) = (dlogits * kh) * scale;
    Matrix<T> dkh = (dlogits.transpose() * qh) * scale;
    if (cache.injected) {
      Matrix<T> dcorr = dlogits;
      if (dcorr_extra && !dcorr_extra->empty()) dcorr += (*dcorr_extra)[h];
      auto qbh = cache.qbar.middleCols(h * dk, dk);
      dqbar.middleCols(h * dk, dk) = (dcorr * kh) * scale;
      dkh += (dcorr.transpose() * qbh) * scale;
    }
    dk_.middleCols(h * dk, dk) = dkh;
  }
  g.wq.noalias() += cache.x.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk.noalias() += cache.x.transpose() * dk_;
  g.bk += dk_.colwise().sum();
  g.wv.noalias() += cache.x.transpose() * dv;
  g.bv += dv.colwise().sum();
  Matrix<T> dx = dq * p.wq.transpose() + dk_ * p.wk.transpose() + dv * p.wv.transpose();
  if (cache.injected) {
    g.w_qbar.noalias() += cache.x.transpose() * dqbar;
    dx.noalias() += dqbar * p.w_qbar->transpose();
  }
  return dx;
}

}  // namespace kid
