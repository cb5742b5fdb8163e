#pragma once
// Full detector: classification path with injection attention, the training
// only localization branch, loss composition and backpropagation.

#include "kid/backbone.hpp"
#include "kid/injection_attention.hpp"
#include "kid/localization.hpp"
#include "kid/regularizers.hpp"

#include <array>

namespace kid {

enum class AttentionMode { baseline, injected };

/// Token sequence (class token first) for one layer.
template <class T>
struct PatchFeatures {
  Matrix<T> tokens;
  int layer_index = 0;
};

/// Layer-0 features: projected patches, class token prepended, positional embedding added.
template <class T>
PatchFeatures<T> patch_embed(const Image& image, const Weights<T>& w) {
  const auto& cfg = w.config;
  require_shape(image.width == cfg.image_size && image.height == cfg.image_size,
                "patch_embed: expected " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                    " image, got " + std::to_string(image.width) + "x" + std::to_string(image.height));
  Matrix<T> patches = patchify<T>(image, cfg.patch_size);
  Matrix<T> x(cfg.num_tokens(), cfg.embed_dim);
  x.row(0) = w.cls_token;
  x.bottomRows(cfg.num_patches()) = linear(patches, w.patch_w, w.patch_b);
  x += w.pos_embed;
  return {std::move(x), 0};
}

struct ForwardOptions {
  AttentionMode mode = AttentionMode::injected;
  bool localization = false;  // requires injected mode
};

template <class T>
struct LayerCache {
  LayerNormCache<T> ln1, ln2;
  AttentionCache<T> attn;
  Matrix<T> xn2, pre1, hidden;
  Matrix<T> loc_in;
  LocalizationUpdateCache<T> loc;
};

/// Everything a backward pass needs for one image.
template <class T>
struct SampleCache {
  ForwardOptions options;
  Matrix<T> patches;
  std::vector<LayerCache<T>> layers;
  std::vector<AuthenticityCorrelation<T>> corr;
  std::vector<T> activation;  // A_l per layer (injected mode)
  LayerNormCache<T> lnf;
  Matrix<T> final_tokens;  // final-norm output
  RowVector<T> logits;
  Matrix<T> loc_final;
  PatchHeadCache<T> loc_head;
  Vector<T> loc_scores;
};

namespace detail {
template <class T>
AttentionParams<T> attention_params(const LayerWeights<T>& L, bool injected) {
  return {L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, injected ? &L.w_qbar : nullptr};
}
template <class T>
AttentionGrads<T> attention_grads(LayerWeights<T>& G) {
  return {G.wq, G.bq, G.wk, G.bk, G.wv, G.bv, G.wo, G.bo, G.w_qbar};
}
template <class T>
void check_finite(const Matrix<T>& m, const char* what, int layer) {
  if (!m.allFinite()) throw NumericalFault(std::string("non-finite ") + what, layer);
}
}  // namespace detail

/// Forward pass with caches. The position encoding is only needed when the
/// localization branch is active.
template <class T>
SampleCache<T> forward_sample(const Image& image, const Weights<T>& w, ForwardOptions opt,
                              const Matrix<T>* position_encoding = nullptr) {
  const auto& cfg = w.config;
  const bool injected = opt.mode == AttentionMode::injected;
  if (opt.localization && !injected) throw std::invalid_argument("localization branch requires injected mode");
  SampleCache<T> c;
  c.options = opt;
  auto embedded = patch_embed(image, w);
  Matrix<T> x = std::move(embedded.tokens);
  c.patches = patchify<T>(image, cfg.patch_size);
  c.layers.resize(cfg.num_layers);
  if (injected) {
    c.corr.resize(cfg.num_layers);
    c.activation.resize(cfg.num_layers);
  }
  Matrix<T> pe_local;
  if (opt.localization) {
    if (!position_encoding) {
      pe_local = sinusoidal_position_encoding<T>(cfg.grid(), cfg.embed_dim);
      position_encoding = &pe_local;
    }
    c.loc_final = linear(c.patches, w.loc_patch_w, w.loc_patch_b);
  }
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& L = w.layers[l];
    auto& lc = c.layers[l];
    Matrix<T> xn = layer_norm<T>(x, L.norm1_gamma, L.norm1_beta, &lc.ln1);
    AuthenticityCorrelation<T>* corr = injected ? &c.corr[l] : nullptr;
    Matrix<T> attn = attention_forward(xn, detail::attention_params(L, injected), cfg.num_heads, lc.attn, corr);
    x += attn;
    lc.xn2 = layer_norm<T>(x, L.norm2_gamma, L.norm2_beta, &lc.ln2);
    lc.pre1 = linear(lc.xn2, L.fc1_w, L.fc1_b);
    lc.hidden = gelu(lc.pre1);
    x += linear(lc.hidden, L.fc2_w, L.fc2_b);
    detail::check_finite(x, "block output", l);
    if (injected) {
      c.corr[l].layer_index = l;
      c.activation[l] = activation_value(c.corr[l]);
      if (!std::isfinite(double(c.activation[l]))) throw NumericalFault("non-finite correlation", l);
    }
    if (opt.localization) {
      lc.loc_in = c.loc_final;
      c.loc_final = update_localization_features<T>(lc.loc_in, c.corr[l].patch_block(), *position_encoding,
                                                    L.loc_norm_gamma, L.loc_norm_beta, L.w_kbar, &lc.loc);
      detail::check_finite(c.loc_final, "localization features", l);
    }
  }
  c.final_tokens = layer_norm<T>(x, w.norm_gamma, w.norm_beta, &c.lnf);
  c.logits = c.final_tokens.row(0) * w.head_w + w.head_b;
  if (!c.logits.allFinite()) throw NumericalFault("non-finite logits", cfg.num_layers);
  if (opt.localization)
    c.loc_scores = patch_prediction_head<T>(c.loc_final, w.loc_fc1_w, w.loc_fc1_b, w.loc_fc2_w, w.loc_fc2_b, &c.loc_head);
  return c;
}

/// Upstream gradients for one sample.
template <class T>
struct SampleUpstream {
  RowVector<T> dlogits;                 // 1 x num_classes
  Vector<T> dscores;                    // N, empty when localization is off
  std::vector<T> dactivation;           // per layer, empty when no regularizer
};

/// Accumulates parameter gradients of one sample into `g`.
template <class T>
void backward_sample(const SampleCache<T>& c, const Weights<T>& w, const SampleUpstream<T>& up, Weights<T>& g) {
  const auto& cfg = w.config;
  const int layers = cfg.num_layers, heads = cfg.num_heads;
  const bool injected = c.options.mode == AttentionMode::injected;
  const Eigen::Index tokens = cfg.num_tokens(), n = cfg.num_patches();

  // Gradients reaching each layer's correlation matrices from outside attention.
  std::vector<std::vector<Matrix<T>>> dcorr(layers);
  if (injected) {
    for (int l = 0; l < layers; ++l) {
      const bool has_act = !up.dactivation.empty() && up.dactivation[l] != T(0);
      if (!has_act && !c.options.localization) continue;
      if (has_act) dcorr[l] = activation_value_grad(c.corr[l], up.dactivation[l]);
      else dcorr[l].assign(heads, Matrix<T>::Zero(tokens, tokens));
    }
  }

  if (c.options.localization && up.dscores.size() > 0) {
    Matrix<T> dloc = patch_head_backward<T>(up.dscores, w.loc_fc1_w, w.loc_fc2_w, c.loc_head, g.loc_fc1_w, g.loc_fc1_b,
                                            g.loc_fc2_w, g.loc_fc2_b);
    for (int l = layers - 1; l >= 0; --l) {
      const auto& L = w.layers[l];
      auto& G = g.layers[l];
      Matrix<T> dpatch;
      dloc = update_localization_backward<T>(dloc, L.loc_norm_gamma, L.w_kbar, c.layers[l].loc, dpatch, G.loc_norm_gamma,
                                             G.loc_norm_beta, G.w_kbar);
      dpatch /= T(heads);
      for (int h = 0; h < heads; ++h) dcorr[l][h].bottomRightCorner(n, n) += dpatch;
    }
    g.loc_patch_w.noalias() += c.patches.transpose() * dloc;
    g.loc_patch_b += dloc.colwise().sum();
  }

  g.head_w.noalias() += c.final_tokens.row(0).transpose() * up.dlogits;
  g.head_b += up.dlogits;
  Matrix<T> dfinal = Matrix<T>::Zero(tokens, cfg.embed_dim);
  dfinal.row(0) = up.dlogits * w.head_w.transpose();
  Matrix<T> dx = layer_norm_backward<T>(dfinal, w.norm_gamma, c.lnf, g.norm_gamma, g.norm_beta);

  for (int l = layers - 1; l >= 0; --l) {
    const auto& L = w.layers[l];
    auto& G = g.layers[l];
    const auto& lc = c.layers[l];
    // MLP residual branch
    G.fc2_w.noalias() += lc.hidden.transpose() * dx;
    G.fc2_b += dx.colwise().sum();
    Matrix<T> dhidden = dx * L.fc2_w.transpose();
    Matrix<T> dpre = gelu_backward<T>(dhidden, lc.pre1);
    G.fc1_w.noalias() += lc.xn2.transpose() * dpre;
    G.fc1_b += dpre.colwise().sum();
    Matrix<T> dxn2 = dpre * L.fc1_w.transpose();
    dx += layer_norm_backward<T>(dxn2, L.norm2_gamma, lc.ln2, G.norm2_gamma, G.norm2_beta);
    // attention residual branch
    auto grads = detail::attention_grads(G);
    Matrix<T> dxn = attention_backward(dx, detail::attention_params(L, injected), heads, lc.attn,
                                       dcorr[l].empty() ? nullptr : &dcorr[l], grads);
    dx += layer_norm_backward<T>(dxn, L.norm1_gamma, lc.ln1, G.norm1_gamma, G.norm1_beta);
    detail::check_finite(dx, "gradient", l);
  }
  g.pos_embed += dx;
  g.cls_token += dx.row(0);
  Matrix<T> dpatch_tokens = dx.bottomRows(n);
  g.patch_w.noalias() += c.patches.transpose() * dpatch_tokens;
  g.patch_b += dpatch_tokens.colwise().sum();
}

/// Inference-style forward: logits, per-layer correlation (injected mode only)
/// and the final-norm token features.
template <class T>
struct ForwardOutput {
  RowVector<T> logits;
  std::vector<AuthenticityCorrelation<T>> per_layer_corr;
  PatchFeatures<T> final_patch_features;
};

template <class T>
ForwardOutput<T> forward(const Image& image, const Weights<T>& w, AttentionMode mode) {
  auto c = forward_sample(image, w, ForwardOptions{mode, false});
  return {c.logits, std::move(c.corr), {std::move(c.final_tokens), w.config.num_layers}};
}

template <class T>
T fake_probability(const RowVector<T>& logits) {
  return sigmoid(logits(1) - logits(0));
}

// ---------------------------------------------------------------- losses

/// The four loss terms and their unweighted sum.
struct LossBreakdown {
  double ce = 0, dice = 0, suppression = 0, contrast = 0, total = 0;
};

inline LossBreakdown total_loss(double ce, double dice, double suppression, double contrast) {
  const std::array<std::pair<const char*, double>, 4> parts = {
      {{"ce", ce}, {"dice", dice}, {"suppression", suppression}, {"contrast", contrast}}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericalFault(std::string("non-finite loss component: ") + name, -1);
  return {ce, dice, suppression, contrast, ce + dice + suppression + contrast};
}

/// Which terms participate in a batch loss.
struct LossSwitches {
  AttentionMode mode = AttentionMode::injected;
  bool localization = true;
  bool suppression = true;
  bool contrast = true;
};

/// One training example: image, class label (0 real, 1 fake) and coarse patch labels.
struct TrainExample {
  Image image;
  int label = 0;
  std::vector<double> patch_labels;
};

/// A batch of B (real, fake) pairs: examples [0, B) are reals and example
/// B + b is the fake synthesized from real b.
struct PairedBatch {
  std::vector<TrainExample> examples;
  int pairs() const { return static_cast<int>(examples.size() / 2); }
};

struct LossSettings {
  double beta = 1.2;
  double mu = 0.1;
  int shallow_cutoff = 1;
  std::vector<int> deep_layers;
  double dice_smooth = 1.0;

  static LossSettings from(const TrainingConfig& c) {
    return {c.regularizer.beta, c.regularizer.mu, c.regularizer.resolved_shallow_cutoff(c.backbone.num_layers),
            c.regularizer.resolved_deep_layers(c.backbone.num_layers), c.dice_smooth};
  }
};

template <class T>
struct BatchResult {
  LossBreakdown loss;
  Weights<T> grad;
  std::vector<RowVector<T>> logits;
  ActivationProfile real_profile, fake_profile;
};

/// Forward, loss composition and backward over a paired batch. Gradients are
/// accumulated per sample and reduced in index order, so the result does not
/// depend on the worker count.
template <class T>
BatchResult<T> batch_loss_and_grad(const Weights<T>& w, const PairedBatch& batch, const LossSwitches& sw,
                                   const LossSettings& ls, bool need_grad = true, unsigned threads = 0) {
  const auto& cfg = w.config;
  const int total = static_cast<int>(batch.examples.size());
  if (total == 0 || total % 2 != 0) throw std::invalid_argument("batch must hold (real, fake) pairs");
  const int pairs = total / 2;
  const bool injected = sw.mode == AttentionMode::injected;
  const bool loc = injected && sw.localization;
  const Matrix<T> pe = sinusoidal_position_encoding<T>(cfg.grid(), cfg.embed_dim);

  std::vector<SampleCache<T>> caches(total);
  parallel_for(
      total, [&](std::size_t i) { caches[i] = forward_sample(batch.examples[i].image, w, ForwardOptions{sw.mode, loc}, &pe); },
      threads);

  BatchResult<T> out;
  std::vector<SampleUpstream<T>> up(total);
  double ce = 0, dice = 0;
  for (int i = 0; i < total; ++i) {
    const auto& ex = batch.examples[i];
    const RowVector<T>& z = caches[i].logits;
    out.logits.push_back(z);
    const T m = z.maxCoeff();
    RowVector<T> p = (z.array() - m).exp();
    const T sum = p.sum();
    p /= sum;
    ce += -(double(z(ex.label)) - double(m) - std::log(double(sum))) / total;
    up[i].dlogits = p;
    up[i].dlogits(ex.label) -= T(1);
    up[i].dlogits /= T(total);
    if (loc) {
      Vector<T> g;
      dice += double(dice_loss<T>(caches[i].loc_scores, ex.patch_labels, ls.dice_smooth, &g)) / total;
      up[i].dscores = g / T(total);
    }
  }

  double suppression = 0, contrast = 0;
  if (injected) {
    ActivationProfile all;
    all.per_layer.assign(cfg.num_layers, std::vector<double>(total));
    out.real_profile.per_layer.assign(cfg.num_layers, std::vector<double>(pairs));
    out.fake_profile.per_layer.assign(cfg.num_layers, std::vector<double>(pairs));
    for (int l = 0; l < cfg.num_layers; ++l)
      for (int i = 0; i < total; ++i) {
        const double a = double(caches[i].activation[l]);
        all.per_layer[l][i] = a;
        (i < pairs ? out.real_profile : out.fake_profile).per_layer[l][i % pairs] = a;
      }
    for (auto& u : up) u.dactivation.assign(cfg.num_layers, T(0));
    if (sw.suppression) {
      ActivationGrad g;
      suppression = suppression_loss(all, ls.beta, ls.shallow_cutoff, &g);
      for (int l = 0; l < cfg.num_layers; ++l)
        for (int i = 0; i < total; ++i) up[i].dactivation[l] += T(g[l][i]);
    }
    if (sw.contrast) {
      ActivationGrad gr, gf;
      contrast = contrast_loss(out.real_profile, out.fake_profile, ls.mu, ls.deep_layers, &gr, &gf);
      for (int l = 0; l < cfg.num_layers; ++l)
        for (int b = 0; b < pairs; ++b) {
          up[b].dactivation[l] += T(gr[l][b]);
          up[pairs + b].dactivation[l] += T(gf[l][b]);
        }
    }
  }
  out.loss = total_loss(ce, dice, suppression, contrast);
  if (!need_grad) return out;

  std::vector<Weights<T>> per_sample(total);
  const Weights<T> zero = zeros_like(w);
  parallel_for(
      total,
      [&](std::size_t i) {
        per_sample[i] = zero;
        backward_sample(caches[i], w, up[i], per_sample[i]);
        caches[i] = SampleCache<T>{};
      },
      threads);
  out.grad = zero;
  auto dst = param_views(out.grad);
  for (auto& g : per_sample) {
    auto src = param_views(g);
    for (std::size_t p = 0; p < dst.size(); ++p)
      Eigen::Map<Vector<T>>(dst[p].data, dst[p].size) += Eigen::Map<const Vector<T>>(src[p].data, src[p].size);
  }
  return out;
}

// ---------------------------------------------------------------- symmetry probe

/// Per-layer max|g_Q - g_Qbar| / (max|g_Q| + eps), where g_Q is the diagnostic
/// gradient of the frozen query projection and g_Qbar that of the knowledge query.
template <class T>
std::vector<double> query_gradient_deviation(const Weights<T>& grad) {
  std::vector<double> dev;
  for (const auto& G : grad.layers) {
    const double diff = double((G.wq - G.w_qbar).cwiseAbs().maxCoeff());
    const double scale = double(G.wq.cwiseAbs().maxCoeff());
    dev.push_back(diff / (scale + 1e-300));
  }
  return dev;
}

/// Classification-only model: gradients of the cross-entropy w.r.t. W_Q and
/// W_Qbar. Rejects switches that activate the localization branch or the
/// regularizers, because those break the symmetry by construction.
template <class T>
std::vector<double> gradient_symmetry_probe(const Weights<T>& w, const PairedBatch& batch, const LossSwitches& sw) {
  if (sw.mode != AttentionMode::injected) throw std::invalid_argument("gradient_symmetry_probe: needs injected mode");
  if (sw.localization || sw.suppression || sw.contrast)
    throw std::invalid_argument("gradient_symmetry_probe: localization branch and regularizers must be disabled");
  auto r = batch_loss_and_grad(w, batch, sw, LossSettings{});
  return query_gradient_deviation(r.grad);
}

}  // namespace kid
