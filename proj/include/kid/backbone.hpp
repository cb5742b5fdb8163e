#pragma once
// ViT-style backbone parameters: named parameter groups, initialization, the
// trainable/frozen partition and the checkpoint archive format.

#include "kid/config.hpp"
#include "kid/image.hpp"
#include "kid/layers.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace kid {

template <class T>
struct LayerWeights {
  RowVector<T> norm1_gamma, norm1_beta;
  Matrix<T> wq, wk, wv, wo;
  RowVector<T> bq, bk, bv, bo;
  Matrix<T> w_qbar;  // knowledge query, zero initialized
  Matrix<T> w_kbar;  // localization update projection
  RowVector<T> norm2_gamma, norm2_beta;
  Matrix<T> fc1_w, fc2_w;
  RowVector<T> fc1_b, fc2_b;
  RowVector<T> loc_norm_gamma, loc_norm_beta;
};

/// All model parameters: classification path, injection pathway and the
/// training-only localization branch.
template <class T>
struct Weights {
  BackboneConfig config;
  Matrix<T> patch_w;
  RowVector<T> patch_b;
  RowVector<T> cls_token;
  Matrix<T> pos_embed;
  std::vector<LayerWeights<T>> layers;
  RowVector<T> norm_gamma, norm_beta;
  Matrix<T> head_w;
  RowVector<T> head_b;
  Matrix<T> loc_patch_w;
  RowVector<T> loc_patch_b;
  Matrix<T> loc_fc1_w, loc_fc2_w;
  RowVector<T> loc_fc1_b, loc_fc2_b;

  /// Visits every parameter as fn(name, eigen_object&), in a fixed order.
  template <class Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

 private:
  template <class Self, class Fn>
  static void visit(Self& s, Fn& fn) {
    fn("patch_embed.weight", s.patch_w);
    fn("patch_embed.bias", s.patch_b);
    fn("cls_token", s.cls_token);
    fn("pos_embed", s.pos_embed);
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      auto& L = s.layers[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      fn(p + "norm1.weight", L.norm1_gamma);
      fn(p + "norm1.bias", L.norm1_beta);
      fn(p + "attn.q.weight", L.wq);
      fn(p + "attn.q.bias", L.bq);
      fn(p + "attn.k.weight", L.wk);
      fn(p + "attn.k.bias", L.bk);
      fn(p + "attn.v.weight", L.wv);
      fn(p + "attn.v.bias", L.bv);
      fn(p + "attn.proj.weight", L.wo);
      fn(p + "attn.proj.bias", L.bo);
      fn(p + "attn.qbar.weight", L.w_qbar);
      fn(p + "attn.kbar.weight", L.w_kbar);
      fn(p + "norm2.weight", L.norm2_gamma);
      fn(p + "norm2.bias", L.norm2_beta);
      fn(p + "mlp.fc1.weight", L.fc1_w);
      fn(p + "mlp.fc1.bias", L.fc1_b);
      fn(p + "mlp.fc2.weight", L.fc2_w);
      fn(p + "mlp.fc2.bias", L.fc2_b);
      fn(p + "loc_norm.weight", L.loc_norm_gamma);
      fn(p + "loc_norm.bias", L.loc_norm_beta);
    }
    fn("norm.weight", s.norm_gamma);
    fn("norm.bias", s.norm_beta);
    fn("head.weight", s.head_w);
    fn("head.bias", s.head_b);
    fn("loc_embed.weight", s.loc_patch_w);
    fn("loc_embed.bias", s.loc_patch_b);
    fn("loc_head.fc1.weight", s.loc_fc1_w);
    fn("loc_head.fc1.bias", s.loc_fc1_b);
    fn("loc_head.fc2.weight", s.loc_fc2_w);
    fn("loc_head.fc2.bias", s.loc_fc2_b);
  }
};

/// Flat view of one parameter tensor.
template <class T>
struct ParamView {
  std::string name;
  T* data;
  Eigen::Index size;
  Eigen::Index rows, cols;
};

template <class T>
std::vector<ParamView<T>> param_views(Weights<T>& w) {
  std::vector<ParamView<T>> out;
  w.for_each([&](const std::string& name, auto& m) { out.push_back({name, m.data(), m.size(), m.rows(), m.cols()}); });
  return out;
}

/// Same shapes as `w`, all zeros. Used for gradient and optimizer buffers.
template <class T>
Weights<T> zeros_like(const Weights<T>& w) {
  Weights<T> z = w;
  z.for_each([](const std::string&, auto& m) { m.setZero(); });
  return z;
}

template <class To, class From>
Weights<To> cast_weights(const Weights<From>& w) {
  Weights<To> out;
  out.config = w.config;
  out.layers.resize(w.layers.size());
  std::map<std::string, const void*> src;
  w.for_each([&](const std::string& name, const auto& m) { src[name] = &m; });
  out.for_each([&](const std::string& name, auto& m) {
    using Dst = std::decay_t<decltype(m)>;
    using Src = std::conditional_t<Dst::RowsAtCompileTime == 1, RowVector<From>, Matrix<From>>;
    m = static_cast<const Src*>(src.at(name))->template cast<To>();
  });
  return out;
}

struct InitOptions {
  double pos_embed_std = 0.02;
  double cls_std = 0.02;
  bool sincos_pos_embed = true;  // patch rows start at the fixed 2-D sin-cos table
};

/// Seeded initialization: Xavier-uniform projections, zero biases, unit norms,
/// zero knowledge-query and zero classification head.
template <class T>
Weights<T> init_weights(const BackboneConfig& cfg, std::uint64_t seed, InitOptions opt = {}) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x5eed));
  auto xavier = [&](int in, int out) {
    const double a = std::sqrt(6.0 / (in + out));
    Matrix<T> m(in, out);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(uniform(rng, -a, a));
    return m;
  };
  auto gauss_row = [&](int n, double sd) {
    RowVector<T> v(n);
    for (int i = 0; i < n; ++i) v(i) = T(normal(rng, 0.0, sd));
    return v;
  };
  const int d = cfg.embed_dim, hidden = cfg.mlp_hidden(), pp = cfg.patch_pixels();
  const RowVector<T> zeros = RowVector<T>::Zero(d), ones = RowVector<T>::Ones(d);
  Weights<T> w;
  w.config = cfg;
  w.patch_w = xavier(pp, d);
  w.patch_b = zeros;
  w.cls_token = gauss_row(d, opt.cls_std);
  w.pos_embed.resize(cfg.num_tokens(), d);
  for (Eigen::Index i = 0; i < w.pos_embed.size(); ++i) w.pos_embed.data()[i] = T(normal(rng, 0.0, opt.pos_embed_std));
  if (opt.sincos_pos_embed) {
    w.pos_embed.row(0).setZero();
    w.pos_embed.bottomRows(cfg.num_patches()) = sinusoidal_position_encoding<T>(cfg.grid(), d);
  }
  w.layers.resize(cfg.num_layers);
  for (auto& L : w.layers) {
    L.norm1_gamma = ones;
    L.norm1_beta = zeros;
    L.wq = xavier(d, d);
    L.wk = xavier(d, d);
    L.wv = xavier(d, d);
    L.wo = xavier(d, d);
    L.bq = L.bk = L.bv = L.bo = zeros;
    L.w_qbar = Matrix<T>::Zero(d, d);
    L.w_kbar = xavier(d, d);
    L.norm2_gamma = ones;
    L.norm2_beta = zeros;
    L.fc1_w = xavier(d, hidden);
    L.fc1_b = RowVector<T>::Zero(hidden);
    L.fc2_w = xavier(hidden, d);
    L.fc2_b = zeros;
    L.loc_norm_gamma = ones;
    L.loc_norm_beta = zeros;
  }
  w.norm_gamma = ones;
  w.norm_beta = zeros;
  w.head_w = Matrix<T>::Zero(d, cfg.num_classes);
  w.head_b = RowVector<T>::Zero(cfg.num_classes);
  w.loc_patch_w = xavier(pp, d);
  w.loc_patch_b = zeros;
  w.loc_fc1_w = xavier(d, d);
  w.loc_fc1_b = zeros;
  w.loc_fc2_w = xavier(d, 1);
  w.loc_fc2_b = RowVector<T>::Zero(1);
  return w;
}

// ---------------------------------------------------------------- partition

enum class ParamRole { trainable, frozen };

/// Classifies one parameter name. Throws on names it does not know, so every
/// new parameter must be placed explicitly.
inline ParamRole classify_parameter(const std::string& name) {
  static const std::set<std::string> top_trainable = {
      "cls_token",        "norm.weight",         "norm.bias",           "head.weight",        "head.bias",
      "loc_embed.weight", "loc_embed.bias",      "loc_head.fc1.weight", "loc_head.fc1.bias",  "loc_head.fc2.weight",
      "loc_head.fc2.bias"};
  static const std::set<std::string> top_frozen = {"patch_embed.weight", "patch_embed.bias", "pos_embed"};
  static const std::set<std::string> block_trainable = {"norm1.weight",     "norm1.bias",      "norm2.weight",
                                                        "norm2.bias",       "attn.qbar.weight", "attn.kbar.weight",
                                                        "loc_norm.weight",  "loc_norm.bias"};
  static const std::set<std::string> block_frozen = {
      "attn.q.weight",    "attn.q.bias",      "attn.k.weight",  "attn.k.bias",    "attn.v.weight",  "attn.v.bias",
      "attn.proj.weight", "attn.proj.bias",   "mlp.fc1.weight", "mlp.fc1.bias",   "mlp.fc2.weight", "mlp.fc2.bias"};
  if (top_trainable.count(name)) return ParamRole::trainable;
  if (top_frozen.count(name)) return ParamRole::frozen;
  if (name.rfind("blocks.", 0) == 0) {
    auto dot = name.find('.', 7);
    if (dot != std::string::npos && dot > 7 &&
        name.find_first_not_of("0123456789", 7) == dot) {
      const std::string rest = name.substr(dot + 1);
      if (block_trainable.count(rest)) return ParamRole::trainable;
      if (block_frozen.count(rest)) return ParamRole::frozen;
    }
  }
  throw std::invalid_argument("unknown parameter name: " + name);
}

struct ParameterPartition {
  std::set<std::string> trainable;
  std::set<std::string> frozen;
};

template <class T>
ParameterPartition parameter_partition(const Weights<T>& w) {
  ParameterPartition p;
  w.for_each([&](const std::string& name, const auto&) {
    (classify_parameter(name) == ParamRole::trainable ? p.trainable : p.frozen).insert(name);
  });
  return p;
}

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'K', 'I', 'D', 'W'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named float64 tensors plus a backbone config and free-form metadata.
struct Archive {
  std::uint32_t version = kCheckpointVersion;
  BackboneConfig config;
  std::map<std::string, Matrix<double>> tensors;
  std::map<std::string, std::string> meta;
};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
  std::string s(get_u32(is), '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(s.size()))) throw CheckpointError("truncated checkpoint");
  return s;
}
inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(os, static_cast<std::uint32_t>(bits));
  put_u32(os, static_cast<std::uint32_t>(bits >> 32));
}
inline double get_f64(std::istream& is) {
  std::uint64_t lo = get_u32(is), hi = get_u32(is);
  std::uint64_t bits = lo | hi << 32;
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
}  // namespace detail

/// Layout (little endian): "KIDW", u32 version, str config, u32 n_tensors,
/// {str name, u32 rows, u32 cols, f64 data...}, u32 n_meta, {str key, str value}.
inline void write_archive(std::ostream& os, const Archive& a) {
  using namespace detail;
  os.write(kCheckpointMagic, 4);
  put_u32(os, a.version);
  std::ostringstream cfg;
  serialize_backbone(cfg, a.config);
  put_str(os, cfg.str());
  put_u32(os, static_cast<std::uint32_t>(a.tensors.size()));
  for (const auto& [name, m] : a.tensors) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
  }
  put_u32(os, static_cast<std::uint32_t>(a.meta.size()));
  for (const auto& [k, v] : a.meta) {
    put_str(os, k);
    put_str(os, v);
  }
}

inline Archive read_archive(std::istream& is) {
  using namespace detail;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint");
  Archive a;
  a.version = get_u32(is);
  if (a.version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(a.version));
  a.config = parse_backbone(get_str(is));
  const std::uint32_t n = get_u32(is);
  for (std::uint32_t t = 0; t < n; ++t) {
    std::string name = get_str(is);
    const std::uint32_t rows = get_u32(is), cols = get_u32(is);
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(is);
    a.tensors.emplace(std::move(name), std::move(m));
  }
  const std::uint32_t nm = get_u32(is);
  for (std::uint32_t i = 0; i < nm; ++i) {
    std::string k = get_str(is);
    a.meta[k] = get_str(is);
  }
  return a;
}

inline void save_archive(const std::string& path, const Archive& a) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path);
  write_archive(f, a);
}

inline Archive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path);
  return read_archive(f);
}

template <class T>
void store_weights(Archive& a, const Weights<T>& w, const std::string& prefix = "") {
  a.config = w.config;
  w.for_each([&](const std::string& name, const auto& m) {
    a.tensors[prefix + name] = Matrix<double>(m.template cast<double>());
  });
}

/// Rebuilds weights from an archive. Rejects a config that differs from
/// `expected` (when given) and any missing or misshapen tensor.
template <class T>
Weights<T> restore_weights(const Archive& a, const BackboneConfig* expected = nullptr, const std::string& prefix = "") {
  if (expected && !(a.config == *expected)) throw CheckpointError("checkpoint config does not match the requested model");
  Weights<T> w = init_weights<T>(a.config, 0);
  w.for_each([&](const std::string& name, auto& m) {
    auto it = a.tensors.find(prefix + name);
    if (it == a.tensors.end()) throw CheckpointError("checkpoint missing tensor " + prefix + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw CheckpointError("checkpoint tensor has wrong shape: " + prefix + name);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(it->second.data()[i]);
  });
  return w;
}

template <class T>
void save_weights(const std::string& path, const Weights<T>& w) {
  Archive a;
  store_weights(a, w);
  save_archive(path, a);
}

template <class T>
Weights<T> load_weights(const std::string& path, const BackboneConfig* expected = nullptr) {
  return restore_weights<T>(load_archive(path), expected);
}

}  // namespace kid
