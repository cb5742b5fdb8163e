#pragma once
// Layer-wise suppression (shallow) and contrast (deep) hinge losses over the
// mean absolute activation of the injected correlation matrices.

#include "kid/injection_attention.hpp"

namespace kid {

/// per_layer[l][b] = activation of layer l for batch element b.
struct ActivationProfile {
  std::vector<std::vector<double>> per_layer;
  int layer_count() const { return static_cast<int>(per_layer.size()); }
  int batch_size() const { return per_layer.empty() ? 0 : static_cast<int>(per_layer.front().size()); }
};

/// Mean |c| over every head and every (i, j) entry, class token included.
template <class T>
T activation_value(const AuthenticityCorrelation<T>& corr) {
  if (corr.heads.empty()) return T(0);
  T sum = 0;
  Eigen::Index count = 0;
  for (const auto& h : corr.heads) {
    sum += h.cwiseAbs().sum();
    count += h.size();
  }
  return sum / T(count);
}

/// d activation / d corr_h, using sign(0) = 0.
template <class T>
std::vector<Matrix<T>> activation_value_grad(const AuthenticityCorrelation<T>& corr, T upstream) {
  std::vector<Matrix<T>> out;
  Eigen::Index count = 0;
  for (const auto& h : corr.heads) count += h.size();
  for (const auto& h : corr.heads)
    out.push_back(h.unaryExpr([&](T v) { return v > 0 ? upstream / T(count) : (v < 0 ? -upstream / T(count) : T(0)); }));
  return out;
}

/// Gradient of a regularizer w.r.t. each activation entry, same layout as the profile.
using ActivationGrad = std::vector<std::vector<double>>;

/// sum_{l <= cutoff} mean_b max(0, A_l,b - beta).
inline double suppression_loss(const ActivationProfile& profile, double beta, int shallow_cutoff,
                               ActivationGrad* grad = nullptr) {
  if (shallow_cutoff >= profile.layer_count()) throw std::invalid_argument("suppression_loss: cutoff out of range");
  const int batch = profile.batch_size();
  if (grad) *grad = ActivationGrad(profile.layer_count(), std::vector<double>(batch, 0.0));
  double loss = 0;
  for (int l = 0; l <= shallow_cutoff; ++l)
    for (int b = 0; b < batch; ++b) {
      const double excess = profile.per_layer[l][b] - beta;
      if (excess > 0) {
        loss += excess / batch;
        if (grad) (*grad)[l][b] = 1.0 / batch;
      }
    }
  return loss;
}

/// sum_{l in deep} mean_b max(0, A_fake - A_real + mu), over 1:1 (real, fake) pairs.
inline double contrast_loss(const ActivationProfile& real, const ActivationProfile& fake, double mu,
                            const std::vector<int>& deep_layers, ActivationGrad* grad_real = nullptr,
                            ActivationGrad* grad_fake = nullptr) {
  if (real.layer_count() != fake.layer_count() || real.batch_size() != fake.batch_size())
    throw std::invalid_argument("contrast_loss: real and fake profiles must be paired one to one");
  const int batch = real.batch_size();
  if (batch == 0) throw std::invalid_argument("contrast_loss: empty batch");
  if (grad_real) *grad_real = ActivationGrad(real.layer_count(), std::vector<double>(batch, 0.0));
  if (grad_fake) *grad_fake = ActivationGrad(real.layer_count(), std::vector<double>(batch, 0.0));
  double loss = 0;
  for (int l : deep_layers) {
    if (l < 0 || l >= real.layer_count()) throw std::invalid_argument("contrast_loss: deep layer out of range");
    for (int b = 0; b < batch; ++b) {
      const double h = fake.per_layer[l][b] - real.per_layer[l][b] + mu;
      if (h > 0) {
        loss += h / batch;
        if (grad_fake) (*grad_fake)[l][b] = 1.0 / batch;
        if (grad_real) (*grad_real)[l][b] = -1.0 / batch;
      }
    }
  }
  return loss;
}

}  // namespace kid
