#pragma once
// Model, regularizer and training configuration plus the flat key=value
// config-file format used by the command line tool.

#include "kid/tensor.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace kid {

struct BackboneConfig {
  int image_size = 224;
  int patch_size = 16;
  int embed_dim = 768;
  int num_layers = 12;
  int num_heads = 12;
  double mlp_ratio = 4.0;
  int num_classes = 2;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int num_tokens() const { return 1 + num_patches(); }
  int head_dim() const { return embed_dim / num_heads; }
  int mlp_hidden() const { return static_cast<int>(std::lround(embed_dim * mlp_ratio)); }
  int patch_pixels() const { return patch_size * patch_size * 3; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw ConfigError("image_size must be a positive multiple of patch_size");
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
      throw ConfigError("embed_dim must be divisible by num_heads");
    if (num_layers < 3) throw ConfigError("num_layers must be at least 3");
    if (mlp_ratio <= 0) throw ConfigError("mlp_ratio must be positive");
    if (num_classes != 2) throw ConfigError("num_classes must be 2");
  }

  bool operator==(const BackboneConfig&) const = default;
};

/// Suppression (shallow layers) and contrast (deep layers) settings.
/// shallow_cutoff < 0 and an empty deep_layers select the layer-count based defaults.
struct RegularizerConfig {
  double beta = 1.2;
  double mu = 0.1;
  int shallow_cutoff = -1;
  std::vector<int> deep_layers;

  int resolved_shallow_cutoff(int num_layers) const {
    return shallow_cutoff >= 0 ? shallow_cutoff : num_layers / 2 - 1;
  }

  std::vector<int> resolved_deep_layers(int num_layers) const {
    if (!deep_layers.empty()) return deep_layers;
    int l0 = resolved_shallow_cutoff(num_layers);
    int count = std::min(3, num_layers - l0 - 1);
    std::vector<int> out;
    for (int l = num_layers - count; l < num_layers; ++l) out.push_back(l);
    return out;
  }

  void validate(int num_layers) const {
    if (!(beta > 0)) throw ConfigError("beta must be > 0");
    if (!(mu >= 0)) throw ConfigError("mu must be >= 0");
    int l0 = resolved_shallow_cutoff(num_layers);
    if (l0 >= num_layers) throw ConfigError("shallow_cutoff must be < num_layers");
    for (int d : resolved_deep_layers(num_layers)) {
      if (d < 0 || d >= num_layers) throw ConfigError("deep layer index out of range");
      if (d <= l0) throw ConfigError("shallow and deep layer sets must be disjoint");
    }
  }
};

enum class TrainMode { injected, full_finetune, baseline };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::injected: return "injected";
    case TrainMode::full_finetune: return "full_finetune";
    case TrainMode::baseline: return "baseline";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "injected") return TrainMode::injected;
  if (s == "full_finetune") return TrainMode::full_finetune;
  if (s == "baseline") return TrainMode::baseline;
  throw ConfigError("unknown mode: " + s);
}

struct TrainingConfig {
  double lr_init = 1e-4;
  double lr_min = 1e-6;
  double weight_decay = 0.01;
  int batch_size = 24;  // (real, fake) pairs per step
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 0;
  RegularizerConfig regularizer;
  double gamma0 = 0.2;
  double gamma1 = 0.8;
  BackboneConfig backbone;
  TrainMode mode = TrainMode::injected;

  bool localization = true;  // coarse localization branch + dice loss
  bool sc_losses = true;     // suppression and contrast losses
  bool early_stop_on_validation = false;
  double dice_smooth = 1.0;

  int num_faces = 200;       // toy generator size when no dataset_root is set
  int test_faces = 100;      // independent held-out toy faces
  double val_fraction = 0.1;
  std::string dataset_root;  // <root>/real/<group>/<frame>.png when set
  bool augment = true;
  std::string init_checkpoint;  // optional pre-trained backbone weights

  void validate() const {
    backbone.validate();
    regularizer.validate(backbone.num_layers);
    if (!(lr_min < lr_init)) throw ConfigError("lr_min must be < lr_init");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(0 <= gamma0 && gamma0 < gamma1 && gamma1 <= 1)) throw ConfigError("need 0 <= gamma0 < gamma1 <= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(dice_smooth > 0)) throw ConfigError("dice_smooth must be > 0");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in [0,1)");
  }
};

/// Small settings used by the desk-scale experiments: 4 layers, width 64, 64x64 faces.
inline TrainingConfig toy_training_config() {
  TrainingConfig c;
  c.backbone = BackboneConfig{64, 8, 64, 4, 4, 4.0, 2};
  c.batch_size = 4;
  c.max_epochs = 40;
  c.patience = 8;
  c.lr_init = 3e-3;
  c.lr_min = 3e-5;
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("not a boolean: " + v);
}

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace detail

/// Applies one key=value assignment. Unknown keys are an error.
inline void set_config_value(TrainingConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  try {
    if (key == "lr_init") c.lr_init = std::stod(value);
    else if (key == "lr_min") c.lr_min = std::stod(value);
    else if (key == "weight_decay") c.weight_decay = std::stod(value);
    else if (key == "batch_size") c.batch_size = std::stoi(value);
    else if (key == "max_epochs") c.max_epochs = std::stoi(value);
    else if (key == "patience") c.patience = std::stoi(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "beta") c.regularizer.beta = std::stod(value);
    else if (key == "mu") c.regularizer.mu = std::stod(value);
    else if (key == "shallow_cutoff") c.regularizer.shallow_cutoff = std::stoi(value);
    else if (key == "deep_layers") c.regularizer.deep_layers = parse_int_list(value);
    else if (key == "gamma0") c.gamma0 = std::stod(value);
    else if (key == "gamma1") c.gamma1 = std::stod(value);
    else if (key == "image_size") c.backbone.image_size = std::stoi(value);
    else if (key == "patch_size") c.backbone.patch_size = std::stoi(value);
    else if (key == "embed_dim") c.backbone.embed_dim = std::stoi(value);
    else if (key == "num_layers") c.backbone.num_layers = std::stoi(value);
    else if (key == "num_heads") c.backbone.num_heads = std::stoi(value);
    else if (key == "mlp_ratio") c.backbone.mlp_ratio = std::stod(value);
    else if (key == "mode") c.mode = parse_train_mode(value);
    else if (key == "localization") c.localization = parse_bool(value);
    else if (key == "sc_losses") c.sc_losses = parse_bool(value);
    else if (key == "early_stop_on") {
      if (value == "train") c.early_stop_on_validation = false;
      else if (value == "validation") c.early_stop_on_validation = true;
      else throw ConfigError("early_stop_on must be train or validation");
    } else if (key == "dice_smooth") c.dice_smooth = std::stod(value);
    else if (key == "num_faces") c.num_faces = std::stoi(value);
    else if (key == "test_faces") c.test_faces = std::stoi(value);
    else if (key == "val_fraction") c.val_fraction = std::stod(value);
    else if (key == "dataset_root") c.dataset_root = value;
    else if (key == "augment") c.augment = parse_bool(value);
    else if (key == "init_checkpoint") c.init_checkpoint = value;
    else throw ConfigError("unknown config key: " + key);
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError("bad value for " + key + ": " + value);
  }
}

/// Parses the flat `key = value` format (`#` starts a comment). Keys that are
/// absent keep the values already in `base`.
inline TrainingConfig parse_config(std::istream& in, TrainingConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainingConfig load_config(const std::string& path, TrainingConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  return parse_config(f, std::move(base));
}

inline std::map<std::string, std::string> config_entries(const TrainingConfig& c) {
  using detail::format_double;
  std::map<std::string, std::string> m;
  m["lr_init"] = format_double(c.lr_init);
  m["lr_min"] = format_double(c.lr_min);
  m["weight_decay"] = format_double(c.weight_decay);
  m["batch_size"] = std::to_string(c.batch_size);
  m["max_epochs"] = std::to_string(c.max_epochs);
  m["patience"] = std::to_string(c.patience);
  m["seed"] = std::to_string(c.seed);
  m["beta"] = format_double(c.regularizer.beta);
  m["mu"] = format_double(c.regularizer.mu);
  m["shallow_cutoff"] = std::to_string(c.regularizer.shallow_cutoff);
  std::string deep;
  for (std::size_t i = 0; i < c.regularizer.deep_layers.size(); ++i)
    deep += (i ? "," : "") + std::to_string(c.regularizer.deep_layers[i]);
  m["deep_layers"] = deep;
  m["gamma0"] = format_double(c.gamma0);
  m["gamma1"] = format_double(c.gamma1);
  m["image_size"] = std::to_string(c.backbone.image_size);
  m["patch_size"] = std::to_string(c.backbone.patch_size);
  m["embed_dim"] = std::to_string(c.backbone.embed_dim);
  m["num_layers"] = std::to_string(c.backbone.num_layers);
  m["num_heads"] = std::to_string(c.backbone.num_heads);
  m["mlp_ratio"] = format_double(c.backbone.mlp_ratio);
  m["mode"] = to_string(c.mode);
  m["localization"] = c.localization ? "true" : "false";
  m["sc_losses"] = c.sc_losses ? "true" : "false";
  m["early_stop_on"] = c.early_stop_on_validation ? "validation" : "train";
  m["dice_smooth"] = format_double(c.dice_smooth);
  m["num_faces"] = std::to_string(c.num_faces);
  m["test_faces"] = std::to_string(c.test_faces);
  m["val_fraction"] = format_double(c.val_fraction);
  m["dataset_root"] = c.dataset_root;
  m["augment"] = c.augment ? "true" : "false";
  m["init_checkpoint"] = c.init_checkpoint;
  return m;
}

inline std::string serialize_config(const TrainingConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

/// FNV-1a over the canonical serialization with the seed removed; the seed is
/// appended separately when naming run directories.
inline std::string config_hash(const TrainingConfig& c) {
  auto entries = config_entries(c);
  entries.erase("seed");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : entries)
    for (char ch : k + "=" + v + ";") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str().substr(0, 12);
}

inline void serialize_backbone(std::ostream& os, const BackboneConfig& b) {
  os << "image_size=" << b.image_size << "\npatch_size=" << b.patch_size << "\nembed_dim=" << b.embed_dim
     << "\nnum_layers=" << b.num_layers << "\nnum_heads=" << b.num_heads
     << "\nmlp_ratio=" << detail::format_double(b.mlp_ratio) << "\nnum_classes=" << b.num_classes << "\n";
}

inline BackboneConfig parse_backbone(const std::string& text) {
  BackboneConfig b;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto k = line.substr(0, eq);
    auto v = line.substr(eq + 1);
    if (k == "image_size") b.image_size = std::stoi(v);
    else if (k == "patch_size") b.patch_size = std::stoi(v);
    else if (k == "embed_dim") b.embed_dim = std::stoi(v);
    else if (k == "num_layers") b.num_layers = std::stoi(v);
    else if (k == "num_heads") b.num_heads = std::stoi(v);
    else if (k == "mlp_ratio") b.mlp_ratio = std::stod(v);
    else if (k == "num_classes") b.num_classes = std::stoi(v);
  }
  return b;
}

}  // namespace kid
