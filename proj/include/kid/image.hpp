#pragma once
// RGB float images, binary masks, PNG/JPEG codecs and basic pixel operations.

#include "kid/tensor.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace kid {

/// HxWx3 interleaved RGB, values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool operator==(const Image&) const = default;
};

/// Binary HxW mask; 1 marks an unmanipulated (outer-face) pixel.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count_ones() const {
    std::size_t n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
  }
  bool operator==(const BinaryMask&) const = default;
};

/// Single-channel float map (blend masks, heatmaps).
struct GrayMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  GrayMap() = default;
  GrayMap(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

class ImageIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows are non-overlapping patches in raster order; columns are (py, px, c).
template <class T>
Matrix<T> patchify(const Image& img, int patch) {
  require_shape(patch > 0 && img.width % patch == 0 && img.height % patch == 0,
                "patchify: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " not divisible by patch " + std::to_string(patch));
  const int gx = img.width / patch, gy = img.height / patch;
  Matrix<T> out(gx * gy, patch * patch * 3);
  for (int py = 0; py < gy; ++py)
    for (int px = 0; px < gx; ++px) {
      const int row = py * gx + px;
      int col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c) out(row, col++) = static_cast<T>(img.at(px * patch + x, py * patch + y, c));
    }
  return out;
}

inline float clamp01(float v) { return v < 0.f ? 0.f : (v > 1.f ? 1.f : v); }

inline void clamp_image(Image& img) {
  for (auto& v : img.data) v = clamp01(v);
}

inline double mse(const Image& a, const Image& b) {
  require_shape(a.width == b.width && a.height == b.height, "mse: size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return s / double(a.data.size());
}

inline double psnr(const Image& a, const Image& b) {
  double m = mse(a, b);
  return m == 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m);
}

inline Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

inline BinaryMask flip_horizontal(const BinaryMask& m) {
  BinaryMask out(m.width, m.height, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(x, y) = m.at(m.width - 1 - x, y);
  return out;
}

inline std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

/// Separable Gaussian blur over `channels` interleaved planes with clamped borders.
inline void blur_planes(std::vector<float>& data, int w, int h, int channels, double sigma) {
  if (sigma <= 0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(data.size());
  auto idx = [&](int x, int y, int c) { return (static_cast<std::size_t>(y) * w + x) * channels + c; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        float s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * data[idx(std::clamp(x + i, 0, w - 1), y, c)];
        tmp[idx(x, y, c)] = s;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        float s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[idx(x, std::clamp(y + i, 0, h - 1), c)];
        data[idx(x, y, c)] = s;
      }
}

inline Image gaussian_blur(const Image& img, double sigma) {
  Image out = img;
  blur_planes(out.data, out.width, out.height, 3, sigma);
  return out;
}

inline GrayMap gaussian_blur(const GrayMap& m, double sigma) {
  GrayMap out = m;
  blur_planes(out.data, out.width, out.height, 1, sigma);
  return out;
}

/// Bilinear sample with clamped borders.
inline float sample_bilinear(const Image& img, double x, double y, int c) {
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  double fx = x - x0, fy = y - y0;
  double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
  double bot = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

inline Image resize_bilinear(const Image& img, int w, int h) {
  if (img.width == w && img.height == h) return img;
  Image out(w, h);
  const double sx = double(img.width) / w, sy = double(img.height) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = sample_bilinear(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, c);
  return out;
}

struct Hsv {
  float h, s, v;  // h in [0,1)
};

inline Hsv rgb_to_hsv(float r, float g, float b) {
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  float d = mx - mn;
  float h = 0;
  if (d > 0) {
    if (mx == r) h = std::fmod((g - b) / d, 6.f);
    else if (mx == g) h = (b - r) / d + 2.f;
    else h = (r - g) / d + 4.f;
    h /= 6.f;
    if (h < 0) h += 1.f;
  }
  return {h, mx > 0 ? d / mx : 0.f, mx};
}

inline void hsv_to_rgb(Hsv c, float& r, float& g, float& b) {
  float h = std::fmod(c.h, 1.f);
  if (h < 0) h += 1.f;
  h *= 6.f;
  int i = static_cast<int>(std::floor(h)) % 6;
  float f = h - std::floor(h);
  float p = c.v * (1 - c.s), q = c.v * (1 - c.s * f), t = c.v * (1 - c.s * (1 - f));
  switch (i) {
    case 0: r = c.v, g = t, b = p; break;
    case 1: r = q, g = c.v, b = p; break;
    case 2: r = p, g = c.v, b = t; break;
    case 3: r = p, g = q, b = c.v; break;
    case 4: r = t, g = p, b = c.v; break;
    default: r = c.v, g = p, b = q; break;
  }
}

/// Shifts hue and scales saturation of every pixel.
inline Image adjust_hue_saturation(const Image& img, float hue_shift, float sat_scale) {
  Image out = img;
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    float* p = &out.data[i * 3];
    Hsv c = rgb_to_hsv(p[0], p[1], p[2]);
    c.h += hue_shift;
    c.s = clamp01(c.s * sat_scale);
    hsv_to_rgb(c, p[0], p[1], p[2]);
  }
  return out;
}

/// out = (in - mean) * contrast + mean + brightness, clamped.
inline Image adjust_brightness_contrast(const Image& img, float brightness, float contrast) {
  double mean = 0;
  for (float v : img.data) mean += v;
  mean /= double(img.data.size());
  Image out = img;
  for (auto& v : out.data) v = clamp01(static_cast<float>((v - mean) * contrast + mean + brightness));
  return out;
}

inline std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.f)); }

inline std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_byte(img.data[i]);
  return out;
}

inline Image from_bytes(const std::uint8_t* bytes, int w, int h) {
  Image img(w, h);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[i] / 255.f;
  return img;
}

// ---------------------------------------------------------------- JPEG

namespace detail {
struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};
inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}
}  // namespace detail

inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
  auto bytes = to_bytes(img);
  jpeg_compress_struct cinfo{};
  detail::JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = detail::jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw ImageIOError("jpeg encode failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, std::clamp(quality, 1, 100), TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = &bytes[static_cast<std::size_t>(cinfo.next_scanline) * img.width * 3];
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

inline Image decode_jpeg(const std::vector<std::uint8_t>& data) {
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = detail::jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageIOError("jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = &bytes[static_cast<std::size_t>(cinfo.output_scanline) * w * 3];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_bytes(bytes.data(), w, h);
}

inline Image jpeg_roundtrip(const Image& img, int quality) { return decode_jpeg(encode_jpeg(img, quality)); }

// ---------------------------------------------------------------- PNG

/// Writes 8-bit PNG with 1 (gray) or 3 (RGB) channels.
inline void write_png(const std::string& path, const std::vector<std::uint8_t>& pixels, int w, int h, int channels) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw ImageIOError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIOError("png encode failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(&pixels[static_cast<std::size_t>(y) * w * channels]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png(const std::string& path, const Image& img) { write_png(path, to_bytes(img), img.width, img.height, 3); }

inline void write_png(const std::string& path, const BinaryMask& m) {
  std::vector<std::uint8_t> px(m.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.data[i] ? 255 : 0;
  write_png(path, px, m.width, m.height, 1);
}

/// Min-max normalized grayscale rendering, upscaled by `scale` with nearest neighbour.
inline void write_png(const std::string& path, const GrayMap& m, int scale = 1) {
  float lo = *std::min_element(m.data.begin(), m.data.end());
  float hi = *std::max_element(m.data.begin(), m.data.end());
  const float range = hi > lo ? hi - lo : 1.f;
  const int w = m.width * scale, h = m.height * scale;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) px[static_cast<std::size_t>(y) * w + x] = to_byte((m.at(x / scale, y / scale) - lo) / range);
  write_png(path, px, w, h, 1);
}

inline Image read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw ImageIOError("cannot read " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIOError("png decode failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = &bytes[static_cast<std::size_t>(y) * w * 3];
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return from_bytes(bytes.data(), w, h);
}

}  // namespace kid
