#pragma once
// Scoring, diagnostic exports (correlation heatmaps, patch activation,
// layer-wise activation, PCA, localization maps) and robustness sweeps.

#include "kid/metrics.hpp"
#include "kid/model.hpp"
#include "kid/plot.hpp"
#include "kid/synthesis.hpp"

#include <Eigen/Eigenvalues>

namespace kid {

/// Fake probability of every sample, classification path only.
template <class T>
std::vector<FrameScore> score_samples(const Weights<T>& w, const std::vector<ImageSample>& samples, AttentionMode mode,
                                      unsigned threads = 0) {
  std::vector<FrameScore> out(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const auto c = forward_sample(samples[i].pixels, w, ForwardOptions{mode, false});
        out[i] = {samples[i].id, samples[i].group_id, double(fake_probability(c.logits)), int(samples[i].label)};
      },
      threads);
  return out;
}

inline double auc_of(const std::vector<FrameScore>& scores) {
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& f : scores) s.push_back(f.score), l.push_back(f.label);
  return auc(s, l);
}

// ---------------------------------------------------------------- correlation visualization

/// Which statistic summarizes a patch's row/column of |Corr|.
enum class PatchActivationMode { row, column, symmetric };

inline PatchActivationMode parse_patch_activation_mode(const std::string& s) {
  if (s == "row") return PatchActivationMode::row;
  if (s == "column") return PatchActivationMode::column;
  if (s == "symmetric") return PatchActivationMode::symmetric;
  throw std::invalid_argument("unknown patch activation mode: " + s);
}

/// Row mode: activation_i = mean_j |C_ij|. Column mode uses C_ji; symmetric
/// averages the two.
template <class Derived>
std::vector<double> patch_activation(const Eigen::MatrixBase<Derived>& block,
                                     PatchActivationMode mode = PatchActivationMode::row) {
  require_shape(block.rows() == block.cols(), "patch_activation: correlation block must be square");
  const Eigen::Index n = block.rows();
  std::vector<double> out(n, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0, col = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      row += std::abs(double(block(i, j)));
      col += std::abs(double(block(j, i)));
    }
    row /= double(n), col /= double(n);
    out[i] = mode == PatchActivationMode::row ? row : mode == PatchActivationMode::column ? col : 0.5 * (row + col);
  }
  return out;
}

struct CorrelationViz {
  Matrix<double> correlation;           // head-averaged, (1+N) x (1+N)
  std::vector<double> patch_activation;  // N, raster patch order
  int grid = 0;
  int layer = 0;
};

template <class T>
CorrelationViz correlation_viz(const Weights<T>& w, const Image& image, int layer,
                               PatchActivationMode mode = PatchActivationMode::row) {
  if (layer < 0 || layer >= w.config.num_layers)
    throw std::invalid_argument("correlation_viz: layer " + std::to_string(layer) + " out of range [0, " +
                                std::to_string(w.config.num_layers) + ")");
  const auto c = forward_sample(image, w, ForwardOptions{AttentionMode::injected, false});
  CorrelationViz v;
  v.correlation = c.corr[layer].head_average().template cast<double>();
  v.patch_activation = patch_activation(c.corr[layer].patch_block(), mode);
  v.grid = w.config.grid();
  v.layer = layer;
  return v;
}

inline void write_matrix_csv(const std::string& path, const Matrix<double>& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << "\n";
  }
}

inline Matrix<double> as_grid(const std::vector<double>& v, int grid) {
  Matrix<double> m(grid, grid);
  for (int i = 0; i < grid * grid; ++i) m(i / grid, i % grid) = v[i];
  return m;
}

/// <prefix>_corr.png/.csv (full matrix) and <prefix>_patch.png/.csv (grid).
inline void write_correlation_viz(const CorrelationViz& v, const std::string& prefix) {
  const auto n = v.correlation.rows();
  std::vector<double> flat(v.correlation.data(), v.correlation.data() + v.correlation.size());
  write_png(prefix + "_corr.png", render_heatmap(flat, int(n), int(n), std::max(1, 512 / int(n))));
  write_matrix_csv(prefix + "_corr.csv", v.correlation);
  write_png(prefix + "_patch.png", render_heatmap(v.patch_activation, v.grid, v.grid, std::max(1, 256 / v.grid)));
  write_matrix_csv(prefix + "_patch.csv", as_grid(v.patch_activation, v.grid));
}

// ---------------------------------------------------------------- localization maps

/// Per-patch scores of the localization head (1 = unmanipulated), raster order.
template <class T>
std::vector<double> localization_map(const Weights<T>& w, const Image& image) {
  const auto c = forward_sample(image, w, ForwardOptions{AttentionMode::injected, true});
  return std::vector<double>(c.loc_scores.data(), c.loc_scores.data() + c.loc_scores.size());
}

// ---------------------------------------------------------------- layer-wise activation

struct ActivationReport {
  std::vector<double> real_mean, real_std, fake_mean, fake_std;
  int layer_count() const { return int(real_mean.size()); }
};

namespace detail {
inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= double(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / double(v.size()));
}
}  // namespace detail

template <class T>
ActivationReport layerwise_activation_report(const Weights<T>& w, const std::vector<ImageSample>& samples,
                                             unsigned threads = 0) {
  const int layers = w.config.num_layers;
  std::vector<std::vector<double>> act(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const auto c = forward_sample(samples[i].pixels, w, ForwardOptions{AttentionMode::injected, false});
        act[i].assign(c.activation.begin(), c.activation.end());
      },
      threads);
  ActivationReport r;
  r.real_mean.resize(layers), r.real_std.resize(layers), r.fake_mean.resize(layers), r.fake_std.resize(layers);
  for (int l = 0; l < layers; ++l) {
    std::vector<double> real, fake;
    for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].label == Label::real ? real : fake).push_back(act[i][l]);
    detail::mean_std(real, r.real_mean[l], r.real_std[l]);
    detail::mean_std(fake, r.fake_mean[l], r.fake_std[l]);
  }
  return r;
}

/// Mean over the given layers of the class-pooled activation (real and fake averaged).
inline double mean_activation(const ActivationReport& r, const std::vector<int>& layers) {
  double s = 0;
  for (int l : layers) s += 0.5 * (r.real_mean.at(l) + r.fake_mean.at(l));
  return layers.empty() ? 0.0 : s / double(layers.size());
}

// ---------------------------------------------------------------- PCA

struct PcaResult {
  Matrix<double> coords;          // samples x dims
  Matrix<double> axes;            // features x dims, unit columns
  std::vector<double> variances;  // per axis, descending
  RowVector<double> mean;
};

/// Projects centred rows onto the top `dims` eigenvectors of the sample
/// covariance. Each axis is signed so its largest-magnitude loading is positive.
inline PcaResult pca(const Matrix<double>& features, int dims = 2) {
  const Eigen::Index n = features.rows(), f = features.cols();
  if (dims < 1 || dims > f) throw std::invalid_argument("pca: dims must be in [1, feature count]");
  if (n < dims) throw std::invalid_argument("pca: fewer samples (" + std::to_string(n) + ") than dims (" +
                                            std::to_string(dims) + ")");
  PcaResult r;
  r.mean = features.colwise().mean();
  const Matrix<double> centred = features.rowwise() - r.mean;
  const Matrix<double> cov = centred.transpose() * centred / double(std::max<Eigen::Index>(1, n - 1));
  Eigen::SelfAdjointEigenSolver<Matrix<double>> eig(cov);
  r.axes.resize(f, dims);
  for (int k = 0; k < dims; ++k) {
    const Eigen::Index idx = f - 1 - k;  // eigenvalues ascend
    Vector<double> axis = eig.eigenvectors().col(idx);
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    r.axes.col(k) = axis;
    r.variances.push_back(std::max(0.0, eig.eigenvalues()(idx)));
  }
  r.coords = centred * r.axes;
  return r;
}

/// Final-layer class-token features (after the final norm), one row per sample.
template <class T>
Matrix<double> class_token_features(const Weights<T>& w, const std::vector<ImageSample>& samples, AttentionMode mode,
                                    unsigned threads = 0) {
  Matrix<double> out(samples.size(), w.config.embed_dim);
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const auto c = forward_sample(samples[i].pixels, w, ForwardOptions{mode, false});
        out.row(i) = c.final_tokens.row(0).template cast<double>();
      },
      threads);
  return out;
}

inline void write_pca_csv(const std::string& path, const std::vector<ImageSample>& samples, const Matrix<double>& coords) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "id,label,group,x,y\n";
  for (std::size_t i = 0; i < samples.size(); ++i)
    out << samples[i].id << "," << (samples[i].label == Label::real ? "real" : "fake") << ","
        << samples[i].group_id.value_or("") << "," << coords(i, 0) << "," << (coords.cols() > 1 ? coords(i, 1) : 0.0)
        << "\n";
}

// ---------------------------------------------------------------- robustness

struct RobustnessTable {
  std::vector<DegradationKind> kinds;
  std::vector<std::vector<double>> auc;  // [kind][severity 0..5]
  double clean = 0;
};

/// AUC for every (degradation, severity). Severity 0 reuses the clean scores.
template <class T>
RobustnessTable robustness_sweep(const Weights<T>& w, const std::vector<ImageSample>& samples, AttentionMode mode,
                                 std::uint64_t seed = 0, unsigned threads = 0) {
  RobustnessTable t;
  t.kinds = all_degradations();
  t.clean = auc_of(score_samples(w, samples, mode, threads));
  for (auto kind : t.kinds) {
    std::vector<double> row{t.clean};
    for (int sev = 1; sev <= 5; ++sev) {
      std::vector<ImageSample> degraded = samples;
      parallel_for(
          degraded.size(),
          [&](std::size_t i) { degraded[i].pixels = degrade(samples[i].pixels, kind, sev, derive_seed(seed, sev, i)); },
          threads);
      row.push_back(auc_of(score_samples(w, degraded, mode, threads)));
    }
    t.auc.push_back(row);
  }
  return t;
}

inline void write_robustness_csv(const std::string& path, const RobustnessTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "kind,severity_0,severity_1,severity_2,severity_3,severity_4,severity_5\n";
  for (std::size_t k = 0; k < t.kinds.size(); ++k) {
    out << to_string(t.kinds[k]);
    for (double a : t.auc[k]) out << "," << a;
    out << "\n";
  }
}

}  // namespace kid
