#include "kid/kid.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace kid;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_root = "runs";
  unsigned threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value config file (defaults to the toy setup)");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "experiment seed");
  app->add_option("--out", c.out_root, "root directory for run directories");
  app->add_option("--threads", c.threads, "worker threads (0 = hardware concurrency)");
}

TrainingConfig load(const Common& o) {
  TrainingConfig c = o.config_path.empty() ? toy_training_config() : load_config(o.config_path, toy_training_config());
  if (o.seed_set) c.seed = o.seed;
  c.validate();
  return c;
}

fs::path run_dir(const Common& o, const TrainingConfig& c) {
  fs::path d = fs::path(o.out_root) / (config_hash(c) + "-s" + std::to_string(c.seed));
  fs::create_directories(d);
  std::ofstream(d / "config.cfg") << serialize_config(c);
  return d;
}

std::string default_checkpoint(const fs::path& dir, const std::string& given) {
  return given.empty() ? (dir / "checkpoint.bin").string() : given;
}

/// Held-out reals with one fixed fake each.
std::vector<ImageSample> evaluation_set(const TrainingConfig& c) {
  const auto d = prepare_data(c);
  const auto& reals = d.test.empty() ? d.validation : d.test;
  if (reals.empty()) throw std::runtime_error("no held-out samples to evaluate");
  return with_fixed_fakes(reals, derive_seed(c.seed, 0x7e5f));
}

AttentionMode attention_mode(const TrainingConfig& c) {
  return c.mode == TrainMode::baseline ? AttentionMode::baseline : AttentionMode::injected;
}

void write_epoch_summary(const fs::path& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path);
  out.precision(10);
  out << "epoch,step,lr,ce,dice,suppression,contrast,total,val_auc,val_loss,wall_seconds\n";
  for (const auto& m : log) {
    out << m.epoch << "," << m.step << "," << m.lr << "," << m.train.ce << "," << m.train.dice << ","
        << m.train.suppression << "," << m.train.contrast << "," << m.train.total << ",";
    if (m.val_auc) out << *m.val_auc;
    out << ",";
    if (m.val_loss) out << *m.val_loss;
    out << "," << m.wall_seconds << "\n";
  }
}

void plot_series(const fs::path& stem, const std::vector<Series>& s) {
  write_png(stem.string() + ".png", line_plot(s));
  write_series_csv(stem.string() + ".csv", s);
}

void plot_training(const fs::path& dir, const std::vector<EpochMetrics>& log) {
  Series ce{"ce", {}, {}}, dice{"dice", {}, {}}, sup{"suppression", {}, {}}, con{"contrast", {}, {}}, tot{"total", {}, {}};
  for (const auto& m : log) {
    for (auto* s : {&ce, &dice, &sup, &con, &tot}) s->x.push_back(double(m.step));
    ce.y.push_back(m.train.ce), dice.y.push_back(m.train.dice), sup.y.push_back(m.train.suppression);
    con.y.push_back(m.train.contrast), tot.y.push_back(m.train.total);
  }
  plot_series(dir / "loss", {tot, ce, dice, sup, con});
}

int cmd_train(const Common& o, const std::string& resume) {
  auto c = load(o);
  const auto dir = run_dir(o, c);
  TrainOptions opt;
  opt.checkpoint_path = (dir / "checkpoint.bin").string();
  opt.metrics_path = (dir / "metrics.jsonl").string();
  opt.resume_from = resume;
  opt.progress = &std::cout;
  opt.threads = o.threads;
  const auto r = train<float>(c, prepare_data(c), opt);
  const auto log = read_metrics_log(opt.metrics_path);
  write_epoch_summary(dir / "summary.csv", log);
  plot_training(dir, log);
  std::cout << "status " << to_string(r.status) << " epochs " << r.log.size() << " steps " << r.steps << "\n";
  if (r.status == TrainStatus::diverged) std::cout << "divergence: " << r.divergence << "\n";
  std::cout << "run directory " << dir.string() << "\n";
  return r.status == TrainStatus::diverged ? 2 : 0;
}

int cmd_eval(const Common& o, const std::string& ckpt, int frames_per_video) {
  const auto c = load(o);
  const auto dir = run_dir(o, c);
  const auto w = load_weights<float>(default_checkpoint(dir, ckpt), &c.backbone);
  const auto samples = evaluation_set(c);
  EvalRecord rec;
  rec.frame_scores = score_samples(w, samples, attention_mode(c), o.threads);
  bool grouped = false;
  std::map<std::string, int> group_sizes;
  for (const auto& f : rec.frame_scores) group_sizes[f.group_id.value_or(f.sample_id)]++;
  for (const auto& [g, n] : group_sizes) grouped |= n > 2;
  const double frame_auc = auc(rec, frames_per_video, c.seed);
  std::optional<double> video_auc;
  if (grouped) {
    rec.aggregation = Aggregation::video;
    video_auc = auc(rec, frames_per_video, c.seed);
  }
  {
    std::ofstream out(dir / "scores.csv");
    out.precision(10);
    out << "id,group,label,score\n";
    for (const auto& f : rec.frame_scores)
      out << f.sample_id << "," << f.group_id.value_or("") << "," << f.label << "," << f.score << "\n";
  }
  std::ofstream(dir / "eval.csv") << "metric,value\nframe_auc," << frame_auc << "\n"
                                   << (video_auc ? "video_auc," + std::to_string(*video_auc) + "\n" : "");
  std::cout << "frame_auc " << frame_auc;
  if (video_auc) std::cout << " video_auc " << *video_auc;
  std::cout << " samples " << samples.size() << "\n";
  return 0;
}

int cmd_synthesize(const Common& o, int count) {
  const auto c = load(o);
  const auto dir = run_dir(o, c) / "synthesized";
  const auto reals = toy_face_dataset(count, derive_seed(c.seed, 0xda7a), c.backbone.image_size);
  const auto all = with_fixed_fakes(reals, derive_seed(c.seed, 0x5a7));
  std::cout << "wrote " << write_manifest(dir.string(), all) << "\n";
  return 0;
}

int cmd_visualize(const Common& o, const std::string& ckpt, int layer, int index, const std::string& patch_mode) {
  const auto c = load(o);
  const auto dir = run_dir(o, c);
  const auto vis = dir / "viz";
  fs::create_directories(vis);
  const auto w = load_weights<float>(default_checkpoint(dir, ckpt), &c.backbone);
  const auto samples = evaluation_set(c);
  const std::size_t half = samples.size() / 2;
  if (index < 0 || std::size_t(index) >= half) throw std::invalid_argument("--index out of range");
  const auto mode = parse_patch_activation_mode(patch_mode);
  const std::vector<int> layers = layer >= 0 ? std::vector<int>{layer} : [&] {
    std::vector<int> all(c.backbone.num_layers);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }();
  for (const auto& [tag, s] : {std::pair{"real", &samples[index]}, std::pair{"fake", &samples[half + index]}}) {
    const std::string stem = (vis / (std::string(tag) + "_" + std::to_string(index))).string();
    write_png(stem + ".png", s->pixels);
    for (int l : layers) write_correlation_viz(correlation_viz(w, s->pixels, l, mode), stem + "_layer" + std::to_string(l));
    const auto loc = localization_map(w, s->pixels);
    const int g = c.backbone.grid();
    write_png(stem + "_localization.png", render_heatmap(loc, g, g, std::max(1, 256 / g)));
    write_matrix_csv(stem + "_localization.csv", as_grid(loc, g));
  }
  const auto features = class_token_features(w, samples, attention_mode(c), o.threads);
  const auto p = pca(features, 2);
  write_pca_csv((dir / "pca.csv").string(), samples, p.coords);
  Series real{"real", {}, {}}, fake{"fake", {}, {}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i].label == Label::real ? real : fake;
    s.x.push_back(p.coords(i, 0)), s.y.push_back(p.coords(i, 1));
  }
  write_png((dir / "pca.png").string(), scatter_plot({real, fake}));
  std::cout << "wrote " << vis.string() << " and " << (dir / "pca.csv").string() << "\n";
  return 0;
}

int cmd_report_activations(const Common& o, const std::string& ckpt) {
  const auto c = load(o);
  const auto dir = run_dir(o, c);
  const auto w = load_weights<float>(default_checkpoint(dir, ckpt), &c.backbone);
  const auto r = layerwise_activation_report(w, evaluation_set(c), o.threads);
  std::ofstream out(dir / "activations.csv");
  out.precision(10);
  out << "layer,real_mean,real_std,fake_mean,fake_std\n";
  Series real{"real", {}, {}}, fake{"fake", {}, {}};
  for (int l = 0; l < r.layer_count(); ++l) {
    out << l << "," << r.real_mean[l] << "," << r.real_std[l] << "," << r.fake_mean[l] << "," << r.fake_std[l] << "\n";
    std::cout << "layer " << l << " real " << r.real_mean[l] << " fake " << r.fake_mean[l] << "\n";
    real.x.push_back(l), real.y.push_back(r.real_mean[l]);
    fake.x.push_back(l), fake.y.push_back(r.fake_mean[l]);
  }
  write_png((dir / "activations.png").string(), line_plot({real, fake}));
  return 0;
}

int cmd_robustness(const Common& o, const std::string& ckpt) {
  const auto c = load(o);
  const auto dir = run_dir(o, c);
  const auto w = load_weights<float>(default_checkpoint(dir, ckpt), &c.backbone);
  const auto t = robustness_sweep(w, evaluation_set(c), attention_mode(c), c.seed, o.threads);
  write_robustness_csv((dir / "robustness.csv").string(), t);
  std::vector<Series> s;
  for (std::size_t k = 0; k < t.kinds.size(); ++k) {
    Series row{to_string(t.kinds[k]), {}, t.auc[k]};
    for (int sev = 0; sev <= 5; ++sev) row.x.push_back(sev);
    std::cout << row.name;
    for (double a : row.y) std::cout << " " << a;
    std::cout << "\n";
    s.push_back(std::move(row));
  }
  write_png((dir / "robustness.png").string(), line_plot(s));
  return 0;
}

int cmd_convergence(const Common& o, std::string injected_log, std::string full_log, std::optional<double> threshold,
                    const std::string& metric_name) {
  auto c = load(o);
  const auto metric = metric_name == "ce" ? ConvergenceMetric::ce : ConvergenceMetric::total;
  fs::path dir;
  auto run_mode = [&](TrainMode m) {
    auto cm = c;
    cm.mode = m;
    Common om = o;
    const auto d = run_dir(om, cm);
    TrainOptions opt;
    opt.metrics_path = (d / "metrics.jsonl").string();
    opt.checkpoint_path = (d / "checkpoint.bin").string();
    opt.progress = &std::cout;
    opt.threads = o.threads;
    train<float>(cm, prepare_data(cm), opt);
    return opt.metrics_path;
  };
  if (injected_log.empty()) injected_log = run_mode(TrainMode::injected);
  if (full_log.empty()) full_log = run_mode(TrainMode::full_finetune);
  c.mode = TrainMode::injected;
  dir = run_dir(o, c);
  const auto inj = read_metrics_log(injected_log), full = read_metrics_log(full_log);
  if (!threshold) threshold = shared_loss_threshold(inj, full, metric);
  const auto r = convergence_report(inj, full, *threshold, metric);
  std::ofstream out(dir / "convergence.csv");
  out << "threshold,steps_injected,steps_full_finetune,ratio\n" << r.threshold << ",";
  if (r.steps_injected) out << *r.steps_injected;
  out << ",";
  if (r.steps_full) out << *r.steps_full;
  out << ",";
  if (r.ratio) out << *r.ratio;
  out << "\n";
  Series a{"injected", {}, {}}, b{"full_finetune", {}, {}};
  for (const auto& m : inj) a.x.push_back(m.step), a.y.push_back(metric == ConvergenceMetric::ce ? m.train.ce : m.train.total);
  for (const auto& m : full) b.x.push_back(m.step), b.y.push_back(metric == ConvergenceMetric::ce ? m.train.ce : m.train.total);
  plot_series(dir / "convergence", {a, b});
  std::cout << "threshold " << r.threshold << " injected_steps "
            << (r.steps_injected ? std::to_string(*r.steps_injected) : "never") << " full_finetune_steps "
            << (r.steps_full ? std::to_string(*r.steps_full) : "never");
  if (r.ratio) std::cout << " ratio " << *r.ratio;
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-injected ViT forgery detector"};
  app.require_subcommand(1);
  Common common;
  std::string ckpt, resume, patch_mode = "row", injected_log, full_log, metric = "total";
  int count = 16, layer = -1, index = 0, frames = 32;
  std::optional<double> threshold;

  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics, plots and a checkpoint");
  add_common(train_cmd, common);
  train_cmd->add_option("--resume", resume, "checkpoint with optimizer state to continue from");

  auto* eval_cmd = app.add_subcommand("eval", "frame- and video-level AUC on the held-out set");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", ckpt);
  eval_cmd->add_option("--frames-per-video", frames);

  auto* synth_cmd = app.add_subcommand("synthesize", "write toy reals, self-blended fakes and masks");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--count", count, "number of reals");

  auto* viz_cmd = app.add_subcommand("visualize", "correlation heatmaps, patch activation, localization maps, PCA");
  add_common(viz_cmd, common);
  viz_cmd->add_option("--checkpoint", ckpt);
  viz_cmd->add_option("--layer", layer, "layer to export (default: all)");
  viz_cmd->add_option("--index", index, "held-out pair index");
  viz_cmd->add_option("--patch-activation", patch_mode, "row, column or symmetric");

  auto* act_cmd = app.add_subcommand("report-activations", "per-layer activation by class");
  add_common(act_cmd, common);
  act_cmd->add_option("--checkpoint", ckpt);

  auto* rob_cmd = app.add_subcommand("robustness", "AUC under each degradation and severity");
  add_common(rob_cmd, common);
  rob_cmd->add_option("--checkpoint", ckpt);

  auto* conv_cmd = app.add_subcommand("convergence-compare", "optimizer steps to a loss threshold, injected vs full fine-tuning");
  add_common(conv_cmd, common);
  conv_cmd->add_option("--injected-log", injected_log, "existing metrics.jsonl (trains when absent)");
  conv_cmd->add_option("--full-log", full_log, "existing metrics.jsonl (trains when absent)");
  conv_cmd->add_option_function<double>("--threshold", [&](double t) { threshold = t; });
  conv_cmd->add_option("--metric", metric)->check(CLI::IsMember({"total", "ce"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(common, resume);
    if (*eval_cmd) return cmd_eval(common, ckpt, frames);
    if (*synth_cmd) return cmd_synthesize(common, count);
    if (*viz_cmd) return cmd_visualize(common, ckpt, layer, index, patch_mode);
    if (*act_cmd) return cmd_report_activations(common, ckpt);
    if (*rob_cmd) return cmd_robustness(common, ckpt);
    if (*conv_cmd) return cmd_convergence(common, injected_log, full_log, threshold, metric);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
