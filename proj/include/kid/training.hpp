#pragma once
// Optimization loop: freezing policy, AdamW with cosine annealing, online
// self-blended pairs, early stopping, metrics log and checkpoints.

#include "kid/metrics.hpp"
#include "kid/model.hpp"
#include "kid/synthesis.hpp"

#include "json.hpp"

#include <chrono>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <ostream>

namespace kid {

/// lr_min + (lr_init - lr_min) * (1 + cos(pi * step / total)) / 2.
inline double lr_at(long step, long total_steps, const TrainingConfig& c) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step outside [0, total_steps]");
  return c.lr_min + 0.5 * (c.lr_init - c.lr_min) * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
}

inline LossSwitches loss_switches(const TrainingConfig& c) {
  if (c.mode == TrainMode::baseline) return {AttentionMode::baseline, false, false, false};
  return {AttentionMode::injected, c.localization, c.sc_losses, c.sc_losses};
}

inline bool is_localization_parameter(const std::string& name) {
  return name.rfind("loc_", 0) == 0 || name.find(".attn.kbar.") != std::string::npos ||
         name.find(".loc_norm.") != std::string::npos;
}

inline bool is_injection_parameter(const std::string& name) {
  return name.find(".attn.qbar.") != std::string::npos || is_localization_parameter(name);
}

/// Names of the tensors the optimizer may touch in the given mode.
template <class T>
std::set<std::string> trainable_parameters(const Weights<T>& w, TrainMode mode, bool localization) {
  std::set<std::string> out;
  const auto partition = parameter_partition(w);
  w.for_each([&](const std::string& name, const auto&) {
    if (!localization && is_localization_parameter(name)) return;
    switch (mode) {
      case TrainMode::injected:
        if (partition.trainable.count(name)) out.insert(name);
        break;
      case TrainMode::full_finetune:
        out.insert(name);
        break;
      case TrainMode::baseline:
        if (!is_injection_parameter(name)) out.insert(name);
        break;
    }
  });
  return out;
}

// ---------------------------------------------------------------- optimizer

/// Adam with decoupled weight decay. Tensors outside the trainable set are
/// never read or written.
template <class T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  AdamW(const Weights<T>& w, std::set<std::string> trainable, double weight_decay)
      : m_(zeros_like(w)), v_(zeros_like(w)), trainable_(std::move(trainable)), weight_decay_(weight_decay) {}

  void step(Weights<T>& w, Weights<T>& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, double(t_)), c2 = 1.0 - std::pow(beta2, double(t_));
    auto pw = param_views(w), pg = param_views(grad), pm = param_views(m_), pv = param_views(v_);
    for (std::size_t p = 0; p < pw.size(); ++p) {
      if (!trainable_.count(pw[p].name)) continue;
      for (Eigen::Index i = 0; i < pw[p].size; ++i) {
        const double g = double(pg[p].data[i]);
        const double m = beta1 * double(pm[p].data[i]) + (1 - beta1) * g;
        const double v = beta2 * double(pv[p].data[i]) + (1 - beta2) * g * g;
        pm[p].data[i] = T(m);
        pv[p].data[i] = T(v);
        double x = double(pw[p].data[i]);
        x -= lr * weight_decay_ * x;
        x -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
        pw[p].data[i] = T(x);
      }
    }
  }

  long steps() const { return t_; }
  const std::set<std::string>& trainable() const { return trainable_; }

  void store(Archive& a) const {
    store_weights(a, m_, "adam.m.");
    store_weights(a, v_, "adam.v.");
    a.meta["adam.t"] = std::to_string(t_);
  }

  void restore(const Archive& a) {
    m_ = restore_weights<T>(a, &m_.config, "adam.m.");
    v_ = restore_weights<T>(a, &v_.config, "adam.v.");
    auto it = a.meta.find("adam.t");
    if (it == a.meta.end()) throw CheckpointError("checkpoint has no optimizer step counter");
    t_ = std::stol(it->second);
  }

 private:
  Weights<T> m_, v_;
  std::set<std::string> trainable_;
  double weight_decay_;
  long t_ = 0;
};

// ---------------------------------------------------------------- early stopping

/// Stops once the watched loss has not strictly decreased for `patience` epochs.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("EarlyStopper: patience must be >= 1");
  }
  /// Records one epoch; returns true when training should stop.
  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      stale_ = 0;
    } else {
      ++stale_;
    }
    return stale_ >= patience_;
  }
  double best() const { return best_; }
  int stale_epochs() const { return stale_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

// ---------------------------------------------------------------- data

struct DataSplit {
  std::vector<ImageSample> train, validation, test;  // reals only
};

inline std::string source_key(const ImageSample& s) { return s.group_id.value_or(s.id); }

/// Holds out val_fraction of the source groups (at least one when the
/// fraction is positive and two or more groups exist).
inline void split_validation(std::vector<ImageSample> reals, double val_fraction, std::uint64_t seed, DataSplit& out) {
  std::vector<std::string> groups;
  for (const auto& s : reals) groups.push_back(source_key(s));
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  Rng rng(derive_seed(seed, 0x5e1));
  std::shuffle(groups.begin(), groups.end(), rng);
  std::size_t n_val = std::size_t(std::ceil(val_fraction * double(groups.size())));
  if (groups.size() < 2) n_val = 0;
  n_val = std::min(n_val, groups.size() - 1);
  const std::set<std::string> held(groups.begin(), groups.begin() + long(n_val));
  for (auto& s : reals) (held.count(source_key(s)) ? out.validation : out.train).push_back(std::move(s));
}

/// Toy faces (train/validation from `num_faces`, an independent test set of
/// `test_faces`) or a real dataset directory split by group.
inline DataSplit prepare_data(const TrainingConfig& c) {
  DataSplit d;
  if (!c.dataset_root.empty()) {
    split_validation(load_real_dataset(c.dataset_root, c.backbone.image_size), c.val_fraction, c.seed, d);
    return d;
  }
  split_validation(toy_face_dataset(c.num_faces, derive_seed(c.seed, 0xda7a), c.backbone.image_size), c.val_fraction,
                   c.seed, d);
  if (c.test_faces > 0) {
    d.test = toy_face_dataset(c.test_faces, derive_seed(c.seed, 0x7e57), c.backbone.image_size);
    for (auto& s : d.test) {
      s.id = "test_" + s.id;
      s.group_id = s.id;
      s.pair_id = s.id;
    }
  }
  return d;
}

inline TrainExample to_example(const ImageSample& s, const TrainingConfig& c) {
  return {s.pixels, static_cast<int>(s.label),
          coarse_patch_labels(s.outer_face_mask, c.backbone.patch_size, c.gamma0, c.gamma1).labels};
}

/// Reals followed by one fixed self-blended fake per real.
inline std::vector<ImageSample> with_fixed_fakes(const std::vector<ImageSample>& reals, std::uint64_t seed) {
  std::vector<ImageSample> out = reals;
  std::vector<ImageSample> fakes(reals.size());
  parallel_for(reals.size(), [&](std::size_t i) { fakes[i] = self_blend_random(reals[i], derive_seed(seed, 0xf1f, i)); });
  for (auto& f : fakes) out.push_back(std::move(f));
  return out;
}

/// Online pairs for one epoch: each real (in shuffled order) is augmented and
/// a fresh fake is blended from the augmented copy.
inline std::vector<std::pair<ImageSample, ImageSample>> epoch_pairs(const std::vector<ImageSample>& reals,
                                                                    const TrainingConfig& c, int epoch) {
  std::vector<std::size_t> order(reals.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(c.seed, 0x0e90c, epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::vector<std::pair<ImageSample, ImageSample>> pairs(reals.size());
  parallel_for(reals.size(), [&](std::size_t k) {
    const std::size_t i = order[k];
    Rng rng(derive_seed(c.seed, 0xa06 + std::uint64_t(epoch), i));
    ImageSample real = c.augment ? augment(reals[i], rng) : reals[i];
    ImageSample fake = self_blend_random(real, derive_seed(c.seed, 0xb1e + std::uint64_t(epoch), i));
    pairs[k] = {std::move(real), std::move(fake)};
  });
  return pairs;
}

// ---------------------------------------------------------------- metrics log

struct EpochMetrics {
  int epoch = 0;   // 1-based
  long step = 0;   // optimizer steps completed at the end of the epoch
  double lr = 0;   // learning rate of the last step
  LossBreakdown train;
  std::vector<double> activation_real, activation_fake;  // per-layer mean A_l
  std::optional<double> val_auc, val_loss;
  double wall_seconds = 0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch},
                      {"step", m.step},
                      {"lr", m.lr},
                      {"ce", m.train.ce},
                      {"dice", m.train.dice},
                      {"suppression", m.train.suppression},
                      {"contrast", m.train.contrast},
                      {"total", m.train.total},
                      {"activation_real", m.activation_real},
                      {"activation_fake", m.activation_fake},
                      {"wall_seconds", m.wall_seconds}};
  j["val_auc"] = m.val_auc ? nlohmann::json(*m.val_auc) : nlohmann::json(nullptr);
  j["val_loss"] = m.val_loss ? nlohmann::json(*m.val_loss) : nlohmann::json(nullptr);
  return j;
}

inline EpochMetrics epoch_metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch");
  m.step = j.at("step");
  m.lr = j.at("lr");
  m.train = {j.at("ce"), j.at("dice"), j.at("suppression"), j.at("contrast"), j.at("total")};
  m.activation_real = j.at("activation_real").get<std::vector<double>>();
  m.activation_fake = j.at("activation_fake").get<std::vector<double>>();
  if (!j.at("val_auc").is_null()) m.val_auc = j.at("val_auc").get<double>();
  if (!j.at("val_loss").is_null()) m.val_loss = j.at("val_loss").get<double>();
  m.wall_seconds = j.at("wall_seconds");
  return m;
}

inline std::vector<EpochMetrics> read_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics log " + path);
  std::vector<EpochMetrics> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(epoch_metrics_from_json(nlohmann::json::parse(line)));
  return out;
}

// ---------------------------------------------------------------- scoring

/// Forward-only pass over labelled samples in (real..., fake...) pair layout:
/// mean loss and per-sample fake probabilities.
struct ScoredSet {
  LossBreakdown loss;
  std::vector<double> scores;
  std::vector<int> labels;
};

template <class T>
ScoredSet score_pairs(const Weights<T>& w, const std::vector<ImageSample>& reals_then_fakes,
                         const TrainingConfig& c, unsigned threads = 0, int chunk = 32) {
  const std::size_t pairs = reals_then_fakes.size() / 2;
  ScoredSet out;
  out.scores.assign(2 * pairs, 0);
  out.labels.assign(2 * pairs, 0);
  const auto sw = loss_switches(c);
  const auto ls = LossSettings::from(c);
  double weight = 0;
  for (std::size_t start = 0; start < pairs; start += chunk) {
    const std::size_t n = std::min<std::size_t>(chunk, pairs - start);
    PairedBatch b;
    for (std::size_t i = 0; i < n; ++i) b.examples.push_back(to_example(reals_then_fakes[start + i], c));
    for (std::size_t i = 0; i < n; ++i) b.examples.push_back(to_example(reals_then_fakes[pairs + start + i], c));
    const auto r = batch_loss_and_grad(w, b, sw, ls, false, threads);
    const double f = double(n);
    out.loss.ce += r.loss.ce * f, out.loss.dice += r.loss.dice * f;
    out.loss.suppression += r.loss.suppression * f, out.loss.contrast += r.loss.contrast * f;
    weight += f;
    for (std::size_t i = 0; i < n; ++i) {
      out.scores[start + i] = double(fake_probability(r.logits[i]));
      out.scores[pairs + start + i] = double(fake_probability(r.logits[n + i]));
      out.labels[pairs + start + i] = 1;
    }
  }
  if (weight > 0)
    out.loss = total_loss(out.loss.ce / weight, out.loss.dice / weight, out.loss.suppression / weight,
                          out.loss.contrast / weight);
  return out;
}

// ---------------------------------------------------------------- training loop

enum class TrainStatus { completed, early_stopped, diverged };

inline std::string to_string(TrainStatus s) {
  switch (s) {
    case TrainStatus::completed: return "completed";
    case TrainStatus::early_stopped: return "early_stopped";
    case TrainStatus::diverged: return "diverged";
  }
  return "?";
}

struct TrainOptions {
  std::string checkpoint_path;  // written after every epoch when set
  std::string metrics_path;     // JSONL, one record per epoch
  std::string resume_from;      // checkpoint with optimizer state
  std::ostream* progress = nullptr;
  unsigned threads = 0;
  std::function<void(const EpochMetrics&)> on_epoch;
};

template <class T>
struct TrainResult {
  Weights<T> weights;  // state after the last completed epoch
  std::vector<EpochMetrics> log;
  TrainStatus status = TrainStatus::completed;
  long steps = 0;
  std::string divergence;  // fault message when diverged
};

template <class T>
Weights<T> initial_weights(const TrainingConfig& c) {
  if (!c.init_checkpoint.empty()) return load_weights<T>(c.init_checkpoint, &c.backbone);
  return init_weights<T>(c.backbone, derive_seed(c.seed, 0x1417));
}

template <class T>
void save_training_checkpoint(const std::string& path, const Weights<T>& w, const AdamW<T>& opt,
                              const TrainingConfig& c, int epoch) {
  Archive a;
  store_weights(a, w);
  opt.store(a);
  a.meta["epoch"] = std::to_string(epoch);
  a.meta["config"] = serialize_config(c);
  save_archive(path, a);
}

template <class T>
TrainResult<T> train(const TrainingConfig& c, const DataSplit& data, const TrainOptions& opt = {}) {
  c.validate();
  if (data.train.empty()) throw std::invalid_argument("train: no training reals");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult<T> res;
  res.weights = initial_weights<T>(c);
  AdamW<T> adam(res.weights, trainable_parameters(res.weights, c.mode, c.localization), c.weight_decay);
  int start_epoch = 0;
  if (!opt.resume_from.empty()) {
    const Archive a = load_archive(opt.resume_from);
    res.weights = restore_weights<T>(a, &c.backbone);
    adam.restore(a);
    start_epoch = std::stoi(a.meta.at("epoch"));
    res.steps = adam.steps();
  }

  const auto sw = loss_switches(c);
  const auto ls = LossSettings::from(c);
  const long steps_per_epoch = long((data.train.size() + c.batch_size - 1) / c.batch_size);
  const long total_steps = long(c.max_epochs) * steps_per_epoch;
  const auto validation = data.validation.empty() ? std::vector<ImageSample>{}
                                                  : with_fixed_fakes(data.validation, derive_seed(c.seed, 0x7a1));
  std::ofstream metrics;
  if (!opt.metrics_path.empty()) metrics.open(opt.metrics_path, start_epoch ? std::ios::app : std::ios::trunc);

  EarlyStopper stopper(c.patience);
  const int layers = c.backbone.num_layers;
  for (int epoch = start_epoch; epoch < c.max_epochs; ++epoch) {
    const Weights<T> last_good = res.weights;
    const auto pairs = epoch_pairs(data.train, c, epoch);
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.activation_real.assign(layers, 0);
    m.activation_fake.assign(layers, 0);
    double ce = 0, dice = 0, sup = 0, con = 0;
    std::size_t seen = 0;
    try {
      for (std::size_t start = 0; start < pairs.size(); start += c.batch_size) {
        const std::size_t n = std::min<std::size_t>(c.batch_size, pairs.size() - start);
        PairedBatch b;
        for (std::size_t i = 0; i < n; ++i) b.examples.push_back(to_example(pairs[start + i].first, c));
        for (std::size_t i = 0; i < n; ++i) b.examples.push_back(to_example(pairs[start + i].second, c));
        auto r = batch_loss_and_grad(res.weights, b, sw, ls, true, opt.threads);
        m.lr = lr_at(res.steps, total_steps, c);
        adam.step(res.weights, r.grad, m.lr);
        ++res.steps;
        const double f = double(n);
        ce += r.loss.ce * f, dice += r.loss.dice * f, sup += r.loss.suppression * f, con += r.loss.contrast * f;
        seen += n;
        if (!r.real_profile.per_layer.empty())
          for (int l = 0; l < layers; ++l)
            for (std::size_t i = 0; i < n; ++i) {
              m.activation_real[l] += r.real_profile.per_layer[l][i];
              m.activation_fake[l] += r.fake_profile.per_layer[l][i];
            }
      }
      for (int l = 0; l < layers; ++l) {
        m.activation_real[l] /= double(seen);
        m.activation_fake[l] /= double(seen);
      }
      m.train = total_loss(ce / seen, dice / seen, sup / seen, con / seen);
      if (!validation.empty()) {
        const auto v = score_pairs(res.weights, validation, c, opt.threads);
        m.val_loss = v.loss.total;
        m.val_auc = auc(v.scores, v.labels);
      }
    } catch (const NumericalFault& e) {
      res.weights = last_good;
      res.status = TrainStatus::diverged;
      res.divergence = e.what();
      if (!opt.checkpoint_path.empty()) save_training_checkpoint(opt.checkpoint_path, res.weights, adam, c, epoch);
      if (opt.progress) *opt.progress << "epoch " << epoch + 1 << ": diverged (" << e.what() << ")\n";
      return res;
    }
    m.step = res.steps;
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(m);
    if (metrics) metrics << to_json(m).dump() << "\n" << std::flush;
    if (!opt.checkpoint_path.empty()) save_training_checkpoint(opt.checkpoint_path, res.weights, adam, c, epoch + 1);
    if (opt.progress) {
      *opt.progress << "epoch " << m.epoch << " step " << m.step << " loss " << m.train.total << " (ce " << m.train.ce
                    << " dice " << m.train.dice << " s " << m.train.suppression << " d " << m.train.contrast << ")";
      if (m.val_auc) *opt.progress << " val_auc " << *m.val_auc;
      *opt.progress << " " << m.wall_seconds << "s\n";
    }
    if (opt.on_epoch) opt.on_epoch(m);
    const double watched = c.early_stop_on_validation && m.val_loss ? *m.val_loss : m.train.total;
    if (stopper.update(watched)) {
      res.status = TrainStatus::early_stopped;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------- convergence

enum class ConvergenceMetric { total, ce };

struct ConvergenceReport {
  double threshold = 0;
  std::optional<long> steps_injected, steps_full;
  /// steps_full / steps_injected; empty when either run never reached the threshold.
  std::optional<double> ratio;
  bool reachable() const { return ratio.has_value(); }
};

/// Optimizer steps at the end of the first epoch whose training loss is at or
/// below the threshold.
inline std::optional<long> steps_to_threshold(const std::vector<EpochMetrics>& log, double threshold,
                                              ConvergenceMetric metric = ConvergenceMetric::total) {
  for (const auto& m : log) {
    const double v = metric == ConvergenceMetric::ce ? m.train.ce : m.train.total;
    if (v <= threshold) return m.step;
  }
  return std::nullopt;
}

/// Lowest loss that both runs reach: the larger of the two run minima.
inline double shared_loss_threshold(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b,
                                    ConvergenceMetric metric = ConvergenceMetric::total) {
  if (a.empty() || b.empty()) throw std::invalid_argument("shared_loss_threshold: empty log");
  auto lowest = [&](const std::vector<EpochMetrics>& log) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& e : log) m = std::min(m, metric == ConvergenceMetric::ce ? e.train.ce : e.train.total);
    return m;
  };
  return std::max(lowest(a), lowest(b));
}

inline ConvergenceReport convergence_report(const std::vector<EpochMetrics>& injected,
                                            const std::vector<EpochMetrics>& full_finetune, double threshold,
                                            ConvergenceMetric metric = ConvergenceMetric::total) {
  ConvergenceReport r;
  r.threshold = threshold;
  r.steps_injected = steps_to_threshold(injected, threshold, metric);
  r.steps_full = steps_to_threshold(full_finetune, threshold, metric);
  if (r.steps_injected && r.steps_full) r.ratio = double(*r.steps_full) / double(*r.steps_injected);
  return r;
}

}  // namespace kid
