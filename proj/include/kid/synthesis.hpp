#pragma once
// Training data factory: procedural toy faces, self-blended fakes,
// augmentations, evaluation degradations and dataset directory I/O.

#include "kid/image.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace kid {

struct Point {
  double x = 0, y = 0;
};

enum class Label { real = 0, fake = 1 };

struct ImageSample {
  std::string id;
  Image pixels;
  Label label = Label::real;
  BinaryMask outer_face_mask;  // 1 = unmanipulated pixel
  std::optional<std::string> group_id;
  std::string pair_id;  // reals: own id; fakes: id of the source real
  std::vector<Point> landmarks;
};

class DegenerateForgery : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------- toy faces

namespace detail {

struct Ellipse {
  double cx, cy, rx, ry, angle;
  bool contains(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
  Point at(double t) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = rx * std::cos(t), v = ry * std::sin(t);
    return {cx + c * u - s * v, cy + s * u + c * v};
  }
};

/// Paints an ellipse with 4x4 supersampled coverage.
inline void paint_ellipse(Image& img, const Ellipse& e, const float rgb[3], float opacity = 1.f) {
  const double r = std::max(e.rx, e.ry) + 1;
  const int x0 = std::max(0, int(e.cx - r)), x1 = std::min(img.width - 1, int(e.cx + r));
  const int y0 = std::max(0, int(e.cy - r)), y1 = std::min(img.height - 1, int(e.cy + r));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) hits += e.contains(x + (sx + 0.5) / 4.0, y + (sy + 0.5) / 4.0) ? 1 : 0;
      if (!hits) continue;
      const float a = opacity * hits / 16.f;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = img.at(x, y, c) * (1 - a) + rgb[c] * a;
    }
}

}  // namespace detail

/// One procedural face: textured background, shaded skin ellipse, eyes,
/// brows, nose and mouth, plus outline/feature landmarks.
inline ImageSample toy_face(int size, std::uint64_t seed, const std::string& id) {
  Rng rng(seed);
  const double s = size;
  Image img(size, size);
  // background: two-colour gradient with stripes and grain
  float bg0[3], bg1[3];
  for (int c = 0; c < 3; ++c) {
    bg0[c] = float(uniform(rng, 0.05, 0.95));
    bg1[c] = float(std::clamp(bg0[c] + uniform(rng, -0.3, 0.3), 0.0, 1.0));
  }
  const double gdir = uniform(rng, 0, 2 * M_PI);
  const double stripe_freq = uniform(rng, 0.05, 0.4), stripe_amp = uniform(rng, 0.0, 0.08);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x / s - 0.5) * std::cos(gdir) + (y / s - 0.5) * std::sin(gdir));
      const double stripe = stripe_amp * std::sin(stripe_freq * (x + 0.7 * y));
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = float(bg0[c] * (1 - t) + bg1[c] * t + stripe);
    }
  // face
  detail::Ellipse face{s / 2 + uniform(rng, -0.07, 0.07) * s, s / 2 + uniform(rng, -0.05, 0.07) * s,
                       uniform(rng, 0.24, 0.31) * s, uniform(rng, 0.31, 0.39) * s, uniform(rng, -0.2, 0.2)};
  static const float tones[6][3] = {{0.96f, 0.80f, 0.69f}, {0.88f, 0.68f, 0.54f}, {0.78f, 0.57f, 0.44f},
                                    {0.63f, 0.44f, 0.33f}, {0.47f, 0.32f, 0.23f}, {0.93f, 0.75f, 0.62f}};
  const auto& base = tones[std::uniform_int_distribution<int>(0, 5)(rng)];
  float skin[3];
  for (int c = 0; c < 3; ++c) skin[c] = float(std::clamp(base[c] + uniform(rng, -0.05, 0.05), 0.0, 1.0));
  const double light = uniform(rng, 0, 2 * M_PI), shade = uniform(rng, 0.05, 0.15);
  const double grain = uniform(rng, 0.01, 0.03);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) hits += face.contains(x + (sx + 0.5) / 4.0, y + (sy + 0.5) / 4.0) ? 1 : 0;
      if (!hits) continue;
      const double nx = (x - face.cx) / face.rx, ny = (y - face.cy) / face.ry;
      const double lit = 1.0 + shade * (nx * std::cos(light) + ny * std::sin(light)) - 0.08 * (nx * nx + ny * ny);
      const double g = normal(rng, 0.0, grain);
      const float a = hits / 16.f;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = img.at(x, y, c) * (1 - a) + float(skin[c] * lit + g) * a;
    }
  const double ca = std::cos(face.angle), sa = std::sin(face.angle);
  auto local = [&](double u, double v) {  // face-relative coordinates in [-1,1]
    return Point{face.cx + ca * u * face.rx - sa * v * face.ry, face.cy + sa * u * face.rx + ca * v * face.ry};
  };
  const float white[3] = {0.95f, 0.95f, 0.93f};
  float iris[3];
  for (int c = 0; c < 3; ++c) iris[c] = float(uniform(rng, 0.05, 0.45));
  float brow[3];
  const double hair = uniform(rng, 0.05, 0.4);
  for (int c = 0; c < 3; ++c) brow[c] = float(hair * (1.0 - 0.1 * c));
  const double eye_y = uniform(rng, -0.3, -0.15), eye_x = uniform(rng, 0.3, 0.42);
  const double eye_r = uniform(rng, 0.12, 0.17) * face.rx;
  std::vector<Point> feature_points;
  for (int side : {-1, 1}) {
    Point e = local(side * eye_x, eye_y);
    detail::paint_ellipse(img, {e.x, e.y, eye_r, eye_r * 0.6, face.angle}, white);
    detail::paint_ellipse(img, {e.x, e.y, eye_r * 0.5, eye_r * 0.5, 0}, iris);
    Point b = local(side * eye_x, eye_y - 0.17);
    detail::paint_ellipse(img, {b.x, b.y, eye_r * 1.2, eye_r * 0.25, face.angle + side * 0.1}, brow, 0.9f);
    feature_points.push_back(e);
  }
  float nose[3];
  for (int c = 0; c < 3; ++c) nose[c] = skin[c] * 0.82f;
  Point n = local(0, 0.08);
  detail::paint_ellipse(img, {n.x, n.y, 0.07 * face.rx, 0.16 * face.ry, face.angle}, nose, 0.8f);
  feature_points.push_back(n);
  const float lips[3] = {float(uniform(rng, 0.55, 0.8)), float(uniform(rng, 0.15, 0.3)), float(uniform(rng, 0.2, 0.35))};
  const double mouth_w = uniform(rng, 0.3, 0.45);
  Point m = local(0, uniform(rng, 0.42, 0.52));
  detail::paint_ellipse(img, {m.x, m.y, mouth_w * face.rx, uniform(rng, 0.05, 0.1) * face.ry, face.angle}, lips);
  feature_points.push_back(local(-mouth_w, 0.47));
  feature_points.push_back(local(mouth_w, 0.47));
  // sensor noise
  const double sensor = uniform(rng, 0.005, 0.02);
  for (auto& v : img.data) v = clamp01(float(v + normal(rng, 0.0, sensor)));

  ImageSample out;
  out.id = id;
  out.pixels = std::move(img);
  out.label = Label::real;
  out.outer_face_mask = BinaryMask(size, size, 1);
  out.group_id = id;
  out.pair_id = id;
  for (int i = 0; i < 20; ++i) out.landmarks.push_back(face.at(2 * M_PI * i / 20));
  for (const auto& p : feature_points) out.landmarks.push_back(p);
  return out;
}

/// n procedural real faces; sample i depends only on (seed, i).
inline std::vector<ImageSample> toy_face_dataset(int n, std::uint64_t seed, int size = 64) {
  if (n < 1) throw std::invalid_argument("toy_face_dataset: n must be >= 1");
  std::vector<ImageSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "face_%05d", i);
    out.push_back(toy_face(size, derive_seed(seed, 0xface, i), id));
  }
  return out;
}

// ---------------------------------------------------------------- self blending

enum class MaskShape { landmark_hull, ellipse };
enum class TransformKind { color_jitter, shift, scale, blur, sharpen };

struct SourceTransform {
  TransformKind kind;
  double magnitude;  // in [0,1]; 0 is the identity
};

/// Everything that determines one synthesized fake besides the source image.
struct BlendRecipe {
  std::uint64_t seed = 0;
  MaskShape mask_shape = MaskShape::landmark_hull;
  std::vector<SourceTransform> source_transforms;
  double blend_feather = 2.0;  // Gaussian sigma in pixels
  double mask_scale = 1.0;     // hull/ellipse dilation around its centroid
  double opacity = 1.0;        // peak blend weight
};

/// Bounds on source transforms: shift <= 3% of the image, hue shift <= 0.1.
inline constexpr double kMaxShiftFraction = 0.03;
inline constexpr double kMaxHueShift = 0.1;

inline BlendRecipe random_recipe(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xb1e4d));
  BlendRecipe r;
  r.seed = seed;
  r.mask_shape = bernoulli(rng, 0.7) ? MaskShape::landmark_hull : MaskShape::ellipse;
  r.source_transforms.push_back({TransformKind::color_jitter, uniform(rng, 0.5, 1.0)});
  if (bernoulli(rng, 0.5)) r.source_transforms.push_back({TransformKind::shift, uniform(rng, 0.3, 1.0)});
  if (bernoulli(rng, 0.3)) r.source_transforms.push_back({TransformKind::scale, uniform(rng, 0.3, 1.0)});
  if (bernoulli(rng, 0.5))
    r.source_transforms.push_back({bernoulli(rng, 0.5) ? TransformKind::blur : TransformKind::sharpen, uniform(rng, 0.3, 1.0)});
  r.blend_feather = uniform(rng, 1.0, 3.0);
  r.mask_scale = uniform(rng, 0.7, 0.95);
  r.opacity = uniform(rng, 0.75, 1.0);
  return r;
}

inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  auto cross = [](const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

inline bool inside_convex(const std::vector<Point>& hull, double x, double y) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    if ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) < 0) return false;
  }
  return true;
}

/// Feathered blend weight in [0, opacity]. Without landmarks the ellipse
/// heuristic assumes a centred face.
inline GrayMap blend_mask(const BlendRecipe& r, const std::vector<Point>& landmarks, int w, int h) {
  GrayMap m(w, h, 0.f);
  Point centre{w / 2.0, h / 2.0};
  double rx = 0.28 * w, ry = 0.36 * h;
  if (!landmarks.empty()) {
    double sx = 0, sy = 0, minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
    for (const auto& p : landmarks) {
      sx += p.x, sy += p.y;
      minx = std::min(minx, p.x), maxx = std::max(maxx, p.x), miny = std::min(miny, p.y), maxy = std::max(maxy, p.y);
    }
    centre = {sx / landmarks.size(), sy / landmarks.size()};
    rx = (maxx - minx) / 2, ry = (maxy - miny) / 2;
  }
  if (r.mask_shape == MaskShape::landmark_hull && landmarks.size() >= 3) {
    std::vector<Point> scaled;
    for (const auto& p : landmarks)
      scaled.push_back({centre.x + (p.x - centre.x) * r.mask_scale, centre.y + (p.y - centre.y) * r.mask_scale});
    const auto hull = convex_hull(scaled);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) m.at(x, y) = inside_convex(hull, x + 0.5, y + 0.5) ? 1.f : 0.f;
  } else {
    detail::Ellipse e{centre.x, centre.y, rx * r.mask_scale, ry * r.mask_scale, 0};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) m.at(x, y) = e.contains(x + 0.5, y + 0.5) ? 1.f : 0.f;
  }
  m = gaussian_blur(m, r.blend_feather);
  for (auto& v : m.data) v *= float(r.opacity);
  return m;
}

/// Pixels with blend weight >= 0.5 count as manipulated.
inline BinaryMask binarize_blend(const GrayMap& blend) {
  BinaryMask out(blend.width, blend.height, 1);
  for (std::size_t i = 0; i < blend.data.size(); ++i) out.data[i] = blend.data[i] >= 0.5f ? 0 : 1;
  return out;
}

inline Image apply_source_transform(const Image& img, const SourceTransform& t, Rng& rng) {
  const double m = std::clamp(t.magnitude, 0.0, 1.0);
  if (m == 0) return img;
  switch (t.kind) {
    case TransformKind::color_jitter: {
      const auto sign = [&] { return bernoulli(rng, 0.5) ? 1.0 : -1.0; };
      Image out = adjust_hue_saturation(img, float(sign() * kMaxHueShift * m * uniform(rng, 0.5, 1.0)),
                                        float(1.0 + sign() * 0.4 * m * uniform(rng, 0.5, 1.0)));
      return adjust_brightness_contrast(out, float(sign() * 0.15 * m * uniform(rng, 0.5, 1.0)),
                                        float(1.0 + sign() * 0.25 * m * uniform(rng, 0.5, 1.0)));
    }
    case TransformKind::shift: {
      const double ang = uniform(rng, 0, 2 * M_PI);
      const double dx = std::cos(ang) * kMaxShiftFraction * m * img.width;
      const double dy = std::sin(ang) * kMaxShiftFraction * m * img.height;
      Image out(img.width, img.height);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = sample_bilinear(img, x - dx, y - dy, c);
      return out;
    }
    case TransformKind::scale: {
      const double f = 1.0 + (bernoulli(rng, 0.5) ? 1 : -1) * 0.05 * m;
      const double cx = img.width / 2.0, cy = img.height / 2.0;
      Image out(img.width, img.height);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = sample_bilinear(img, cx + (x - cx) / f, cy + (y - cy) / f, c);
      return out;
    }
    case TransformKind::blur:
      return gaussian_blur(img, 0.3 + 0.9 * m);
    case TransformKind::sharpen: {
      Image soft = gaussian_blur(img, 1.0);
      Image out = img;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = clamp01(float(img.data[i] + 0.8 * m * (img.data[i] - soft.data[i])));
      return out;
    }
  }
  return img;
}

/// Blends a transformed copy of `real` into itself inside the feathered face
/// mask. Pure function of (real, recipe).
inline ImageSample self_blend(const ImageSample& real, const BlendRecipe& recipe) {
  if (real.label != Label::real) throw std::invalid_argument("self_blend: source must be a real sample");
  const Image& base = real.pixels;
  Rng rng(derive_seed(recipe.seed, 0x5b1));
  Image source = base;
  for (const auto& t : recipe.source_transforms) source = apply_source_transform(source, t, rng);
  const GrayMap blend = blend_mask(recipe, real.landmarks, base.width, base.height);
  BinaryMask outer = binarize_blend(blend);
  const double manipulated = 1.0 - double(outer.count_ones()) / double(outer.data.size());
  if (manipulated < 0.01 || manipulated > 0.99)
    throw DegenerateForgery("self_blend: blend mask covers " + std::to_string(manipulated * 100) + "% of the image");
  ImageSample fake;
  fake.pixels = base;
  bool changed = false;
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      const float a = blend.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const float v = base.at(x, y, c) + a * (source.at(x, y, c) - base.at(x, y, c));
        changed |= v != base.at(x, y, c);
        fake.pixels.at(x, y, c) = v;
      }
    }
  if (!changed) throw DegenerateForgery("self_blend: transformed source equals the original; no forgery produced");
  fake.id = real.id + "_sbi";
  fake.label = Label::fake;
  fake.outer_face_mask = std::move(outer);
  fake.group_id = real.group_id;
  fake.pair_id = real.id;
  fake.landmarks = real.landmarks;
  return fake;
}

/// Draws recipes from `seed` until one yields a non-degenerate forgery.
inline ImageSample self_blend_random(const ImageSample& real, std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
    try {
      return self_blend(real, random_recipe(derive_seed(seed, attempt)));
    } catch (const DegenerateForgery&) {
    }
  }
  throw DegenerateForgery("self_blend_random: no valid recipe for " + real.id);
}

// ---------------------------------------------------------------- augmentation

struct AugmentOptions {
  double flip_prob = 0.5;
  double hue_saturation_prob = 0.3;
  double brightness_contrast_prob = 0.3;
  double jpeg_prob = 0.2;
  double blur_prob = 0.1;
};

/// What an augment call applied; useful for replay and tests.
struct AugmentRecord {
  bool flipped = false;
  bool hue_saturation = false;
  bool brightness_contrast = false;
  int jpeg_quality = 0;
  double blur_sigma = 0;
};

inline Point flip_point(const Point& p, int width) { return {width - p.x, p.y}; }

/// Flip, hue/saturation, brightness/contrast, JPEG and blur. Only the flip
/// touches the mask and landmarks.
inline ImageSample augment(const ImageSample& in, Rng& rng, const AugmentOptions& opt = {},
                           AugmentRecord* record = nullptr) {
  ImageSample s = in;
  AugmentRecord rec;
  if (bernoulli(rng, opt.flip_prob)) {
    rec.flipped = true;
    s.pixels = flip_horizontal(s.pixels);
    s.outer_face_mask = flip_horizontal(s.outer_face_mask);
    for (auto& p : s.landmarks) p = flip_point(p, s.pixels.width);
  }
  if (bernoulli(rng, opt.hue_saturation_prob)) {
    rec.hue_saturation = true;
    s.pixels = adjust_hue_saturation(s.pixels, float(uniform(rng, -0.03, 0.03)), float(uniform(rng, 0.8, 1.2)));
  }
  if (bernoulli(rng, opt.brightness_contrast_prob)) {
    rec.brightness_contrast = true;
    s.pixels = adjust_brightness_contrast(s.pixels, float(uniform(rng, -0.1, 0.1)), float(uniform(rng, 0.85, 1.15)));
  }
  if (bernoulli(rng, opt.jpeg_prob)) {
    rec.jpeg_quality = std::uniform_int_distribution<int>(70, 100)(rng);
    s.pixels = jpeg_roundtrip(s.pixels, rec.jpeg_quality);
  }
  if (bernoulli(rng, opt.blur_prob)) {
    rec.blur_sigma = uniform(rng, 0.3, 0.8);
    s.pixels = gaussian_blur(s.pixels, rec.blur_sigma);
  }
  if (record) *record = rec;
  return s;
}

// ---------------------------------------------------------------- degradations

enum class DegradationKind { jpeg, saturation, gaussian_blur, gaussian_noise, contrast };

inline const std::vector<DegradationKind>& all_degradations() {
  static const std::vector<DegradationKind> kinds = {DegradationKind::jpeg, DegradationKind::saturation,
                                                     DegradationKind::gaussian_blur, DegradationKind::gaussian_noise,
                                                     DegradationKind::contrast};
  return kinds;
}

inline std::string to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::jpeg: return "jpeg";
    case DegradationKind::saturation: return "saturation";
    case DegradationKind::gaussian_blur: return "gaussian_blur";
    case DegradationKind::gaussian_noise: return "gaussian_noise";
    case DegradationKind::contrast: return "contrast";
  }
  return "?";
}

inline DegradationKind parse_degradation(const std::string& s) {
  for (auto k : all_degradations())
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown degradation kind: " + s);
}

/// Deterministic degradation at severity 0 (identity) to 5 (strongest).
inline Image degrade(const Image& img, DegradationKind kind, int severity, std::uint64_t seed = 0) {
  if (severity < 0 || severity > 5) throw std::invalid_argument("degrade: severity must be in 0..5");
  if (severity == 0) return img;
  const int i = severity - 1;
  switch (kind) {
    case DegradationKind::jpeg: {
      static const int quality[5] = {80, 60, 40, 25, 10};
      return jpeg_roundtrip(img, quality[i]);
    }
    case DegradationKind::saturation: {
      static const float scale[5] = {0.8f, 0.6f, 0.4f, 0.2f, 0.0f};
      return adjust_hue_saturation(img, 0.f, scale[i]);
    }
    case DegradationKind::gaussian_blur: {
      static const double sigma[5] = {0.5, 1.0, 1.5, 2.0, 3.0};
      return gaussian_blur(img, sigma[i]);
    }
    case DegradationKind::gaussian_noise: {
      static const double sd[5] = {0.02, 0.04, 0.06, 0.08, 0.10};
      Rng rng(derive_seed(seed, 0x901e));
      Image out = img;
      for (auto& v : out.data) v = clamp01(float(v + normal(rng, 0.0, sd[i])));
      return out;
    }
    case DegradationKind::contrast: {
      static const float factor[5] = {0.85f, 0.7f, 0.55f, 0.4f, 0.25f};
      return adjust_brightness_contrast(img, 0.f, factor[i]);
    }
  }
  return img;
}

// ---------------------------------------------------------------- dataset I/O

inline std::vector<Point> read_landmarks(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ImageIOError("cannot read " + path);
  auto j = nlohmann::json::parse(f);
  std::vector<Point> pts;
  for (const auto& p : j) {
    if (p.is_array()) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    else pts.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
  }
  return pts;
}

/// Loads `<root>/real/<group>/<frame>.png` (+ optional `<frame>.landmarks.json`),
/// resized to `size` x `size`, sorted by group then frame.
inline std::vector<ImageSample> load_real_dataset(const std::string& root, int size) {
  namespace fs = std::filesystem;
  const fs::path real = fs::path(root) / "real";
  if (!fs::is_directory(real)) throw ImageIOError("dataset root has no real/ directory: " + root);
  std::vector<fs::path> groups;
  for (const auto& e : fs::directory_iterator(real))
    if (e.is_directory()) groups.push_back(e.path());
  std::sort(groups.begin(), groups.end());
  std::vector<ImageSample> out;
  for (const auto& g : groups) {
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(g))
      if (e.path().extension() == ".png") frames.push_back(e.path());
    std::sort(frames.begin(), frames.end());
    for (const auto& f : frames) {
      ImageSample s;
      const Image raw = read_png(f.string());
      s.pixels = resize_bilinear(raw, size, size);
      s.id = g.filename().string() + "/" + f.stem().string();
      s.group_id = g.filename().string();
      s.pair_id = s.id;
      s.outer_face_mask = BinaryMask(size, size, 1);
      const fs::path lm = f.parent_path() / (f.stem().string() + ".landmarks.json");
      if (fs::exists(lm))
        for (auto p : read_landmarks(lm.string()))
          s.landmarks.push_back({p.x * size / raw.width, p.y * size / raw.height});
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Writes images and masks under `dir` and a line-delimited manifest of
/// {path, label, pair_id, mask_path} records. Returns the manifest path.
inline std::string write_manifest(const std::string& dir, const std::vector<ImageSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  const fs::path manifest = fs::path(dir) / "manifest.jsonl";
  std::ofstream out(manifest);
  for (const auto& s : samples) {
    std::string stem = s.id;
    std::replace(stem.begin(), stem.end(), '/', '_');
    const std::string img_rel = "images/" + stem + ".png", mask_rel = "masks/" + stem + ".png";
    write_png((fs::path(dir) / img_rel).string(), s.pixels);
    write_png((fs::path(dir) / mask_rel).string(), s.outer_face_mask);
    nlohmann::json rec = {{"path", img_rel},
                          {"label", s.label == Label::real ? "real" : "fake"},
                          {"pair_id", s.pair_id},
                          {"mask_path", mask_rel}};
    out << rec.dump() << "\n";
  }
  return manifest.string();
}

}  // namespace kid
