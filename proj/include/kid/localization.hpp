#pragma once
// Training-only coarse forgery localization branch: a patch-token stream that
// is propagated by the injected correlation matrices, a per-patch MLP head,
// the coarse patch-label rule and the dice loss.

#include "kid/image.hpp"
#include "kid/injection_attention.hpp"

namespace kid {

template <class T>
struct LocalizationFeatures {
  Matrix<T> tokens;  // N x D, no class token
  int layer_index = 0;
};

struct PatchLabelMap {
  std::vector<double> labels;
  int rows = 0;
  int cols = 0;
};

/// Patch embedding with the branch's own projection; no class token, no positional term.
template <class T>
LocalizationFeatures<T> init_localization_features(const Image& image, const Matrix<T>& w, const RowVector<T>& b,
                                                   int patch_size) {
  Matrix<T> patches = patchify<T>(image, patch_size);
  require_shape(patches.cols() == w.rows(), "init_localization_features: projection does not match patch size");
  return {linear(patches, w, b), 0};
}

template <class T>
struct LocalizationUpdateCache {
  LayerNormCache<T> ln;
  Matrix<T> normed;   // LN(L + PE)
  Matrix<T> routing;  // softmax(patch corr)
  Matrix<T> mixed;    // routing * normed
};

/// L_next = softmax(corr_patch) * LN(L + PE) * W_Kbar, softmax over each row.
template <class T>
Matrix<T> update_localization_features(const Matrix<T>& loc, const Matrix<T>& corr_patch, const Matrix<T>& pe,
                                       const RowVector<T>& ln_gamma, const RowVector<T>& ln_beta,
                                       const Matrix<T>& w_kbar, LocalizationUpdateCache<T>* cache = nullptr) {
  require_shape(corr_patch.rows() == loc.rows() && corr_patch.cols() == loc.rows(),
                "update_localization_features: correlation patch block must be N x N");
  require_shape(pe.rows() == loc.rows() && pe.cols() == loc.cols(), "update_localization_features: PE shape mismatch");
  require_shape(w_kbar.rows() == loc.cols(), "update_localization_features: W_Kbar shape mismatch");
  LocalizationUpdateCache<T> local;
  auto& c = cache ? *cache : local;
  c.normed = layer_norm<T>(loc + pe, ln_gamma, ln_beta, &c.ln);
  c.routing = softmax_rows(corr_patch);
  c.mixed = c.routing * c.normed;
  return c.mixed * w_kbar;
}

/// Returns dL (gradient w.r.t. the incoming features). Accumulates parameter
/// grads and writes the gradient w.r.t. the patch correlation block.
template <class T>
Matrix<T> update_localization_backward(const Matrix<T>& dout, const RowVector<T>& ln_gamma, const Matrix<T>& w_kbar,
                                       const LocalizationUpdateCache<T>& c, Matrix<T>& d_corr_patch,
                                       RowVector<T>& d_gamma, RowVector<T>& d_beta, Matrix<T>& d_wkbar) {
  d_wkbar.noalias() += c.mixed.transpose() * dout;
  Matrix<T> dmixed = dout * w_kbar.transpose();
  Matrix<T> drouting = dmixed * c.normed.transpose();
  Matrix<T> dnormed = c.routing.transpose() * dmixed;
  d_corr_patch = softmax_rows_backward(drouting, c.routing);
  return layer_norm_backward<T>(dnormed, ln_gamma, c.ln, d_gamma, d_beta);
}

/// y = 0 below gamma0, 1 above gamma1, otherwise the fraction itself.
inline double coarse_label(double fraction, double gamma0, double gamma1) {
  if (fraction < gamma0) return 0.0;
  if (fraction > gamma1) return 1.0;
  return fraction;
}

/// Per-patch outer-face fraction mapped through coarse_label.
inline PatchLabelMap coarse_patch_labels(const BinaryMask& outer_face, int patch_size, double gamma0, double gamma1) {
  if (!(0 <= gamma0 && gamma0 < gamma1 && gamma1 <= 1))
    throw std::invalid_argument("coarse_patch_labels: thresholds must satisfy 0 <= gamma0 < gamma1 <= 1");
  require_shape(patch_size > 0 && outer_face.width % patch_size == 0 && outer_face.height % patch_size == 0,
                "coarse_patch_labels: mask not divisible by patch size");
  PatchLabelMap out;
  out.rows = outer_face.height / patch_size;
  out.cols = outer_face.width / patch_size;
  out.labels.resize(static_cast<std::size_t>(out.rows) * out.cols);
  const double area = double(patch_size) * patch_size;
  for (int pr = 0; pr < out.rows; ++pr)
    for (int pc = 0; pc < out.cols; ++pc) {
      int count = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) count += outer_face.at(pc * patch_size + x, pr * patch_size + y) ? 1 : 0;
      out.labels[static_cast<std::size_t>(pr) * out.cols + pc] = coarse_label(count / area, gamma0, gamma1);
    }
  return out;
}

template <class T>
struct PatchHeadCache {
  Matrix<T> input, pre, hidden;
  Vector<T> scores;
};

/// Two-layer MLP with sigmoid output, one score per patch.
template <class T>
Vector<T> patch_prediction_head(const Matrix<T>& loc, const Matrix<T>& w1, const RowVector<T>& b1, const Matrix<T>& w2,
                                const RowVector<T>& b2, PatchHeadCache<T>* cache = nullptr) {
  require_shape(loc.cols() == w1.rows() && w1.cols() == w2.rows() && w2.cols() == 1,
                "patch_prediction_head: weight shapes inconsistent with features");
  Matrix<T> pre = linear(loc, w1, b1);
  Matrix<T> hidden = gelu(pre);
  Matrix<T> z = linear(hidden, w2, b2);
  Vector<T> scores = z.col(0).unaryExpr([](T v) { return sigmoid(v); });
  if (cache) {
    cache->input = loc;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->scores = scores;
  }
  return scores;
}

template <class T>
Matrix<T> patch_head_backward(const Vector<T>& dscores, const Matrix<T>& w1, const Matrix<T>& w2,
                              const PatchHeadCache<T>& c, Matrix<T>& dw1, RowVector<T>& db1, Matrix<T>& dw2,
                              RowVector<T>& db2) {
  Matrix<T> dz = (dscores.array() * c.scores.array() * (T(1) - c.scores.array())).matrix();
  dw2.noalias() += c.hidden.transpose() * dz;
  db2 += dz.colwise().sum();
  Matrix<T> dhidden = dz * w2.transpose();
  Matrix<T> dpre = gelu_backward<T>(dhidden, c.pre);
  dw1.noalias() += c.input.transpose() * dpre;
  db1 += dpre.colwise().sum();
  return dpre * w1.transpose();
}

/// 1 - (2 sum(p y) + s) / (sum p + sum y + s).
template <class T>
T dice_loss(const Vector<T>& pred, const std::vector<double>& labels, double smooth, Vector<T>* grad = nullptr) {
  require_shape(pred.size() == static_cast<Eigen::Index>(labels.size()), "dice_loss: length mismatch");
  const T s = T(smooth);
  T inter = 0, sp = 0, sy = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    inter += pred(i) * T(labels[i]);
    sp += pred(i);
    sy += T(labels[i]);
  }
  const T num = T(2) * inter + s, den = sp + sy + s;
  if (grad) {
    grad->resize(pred.size());
    for (Eigen::Index i = 0; i < pred.size(); ++i) (*grad)(i) = -(T(2) * T(labels[i]) * den - num) / (den * den);
  }
  return T(1) - num / den;
}

}  // namespace kid
