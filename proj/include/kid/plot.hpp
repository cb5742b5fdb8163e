#pragma once
// Minimal raster plotting: colour-mapped heatmaps, line charts and scatter
// plots written as PNG. Axes carry tick marks but no text; every plot has a
// CSV sidecar with the underlying numbers.

#include "kid/image.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace kid {

using Rgb = std::array<float, 3>;

/// Piecewise-linear approximation of the viridis ramp, t in [0,1].
inline Rgb colormap(double t) {
  static const Rgb stops[5] = {{0.267f, 0.005f, 0.329f},
                               {0.230f, 0.322f, 0.546f},
                               {0.128f, 0.567f, 0.551f},
                               {0.369f, 0.789f, 0.383f},
                               {0.993f, 0.906f, 0.144f}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const int i = std::min(3, int(t));
  const float f = float(t - i);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = stops[i][c] * (1 - f) + stops[i + 1][c] * f;
  return out;
}

/// Per-image min-max colour rendering of a rows x cols grid, each cell scale x scale pixels.
inline Image render_heatmap(const std::vector<double>& values, int rows, int cols, int scale = 8) {
  if (int(values.size()) != rows * cols) throw std::invalid_argument("render_heatmap: size mismatch");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values) lo = std::min(lo, v), hi = std::max(hi, v);
  const double range = hi > lo ? hi - lo : 1.0;
  Image img(cols * scale, rows * scale);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Rgb col = colormap((values[r * cols + c] - lo) / range);
      for (int y = 0; y < scale; ++y)
        for (int x = 0; x < scale; ++x)
          for (int k = 0; k < 3; ++k) img.at(c * scale + x, r * scale + y, k) = col[k];
    }
  return img;
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace detail {

inline const Rgb& palette(std::size_t i) {
  static const Rgb colours[8] = {{0.12f, 0.47f, 0.71f}, {1.00f, 0.50f, 0.05f}, {0.17f, 0.63f, 0.17f},
                                 {0.84f, 0.15f, 0.16f}, {0.58f, 0.40f, 0.74f}, {0.55f, 0.34f, 0.29f},
                                 {0.89f, 0.47f, 0.76f}, {0.50f, 0.50f, 0.50f}};
  return colours[i % 8];
}

inline void put(Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
}

inline void line(Image& img, double x0, double y0, double x1, double y1, const Rgb& c, int thickness = 2) {
  const int steps = int(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = double(s) / steps;
    const int x = int(std::lround(x0 + t * (x1 - x0))), y = int(std::lround(y0 + t * (y1 - y0)));
    for (int dy = 0; dy < thickness; ++dy)
      for (int dx = 0; dx < thickness; ++dx) put(img, x + dx, y + dy, c);
  }
}

struct Frame {
  int width, height, margin;
  double xmin, xmax, ymin, ymax;
  double px(double x) const { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); }
};

inline Frame frame_for(const std::vector<Series>& series, int width, int height) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]), xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]), ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  return {width, height, 40, xmin, xmax, ymin - pad, ymax + pad};
}

inline Image axes(const Frame& f) {
  Image img(f.width, f.height);
  std::fill(img.data.begin(), img.data.end(), 1.f);
  const Rgb black{0, 0, 0}, grid{0.9f, 0.9f, 0.9f};
  for (int i = 0; i <= 10; ++i) {
    const double gx = f.margin + i * (f.width - 2.0 * f.margin) / 10, gy = f.margin + i * (f.height - 2.0 * f.margin) / 10;
    line(img, gx, f.margin, gx, f.height - f.margin, grid, 1);
    line(img, f.margin, gy, f.width - f.margin, gy, grid, 1);
    line(img, gx, f.height - f.margin, gx, f.height - f.margin + 5, black, 1);
    line(img, f.margin - 5, gy, f.margin, gy, black, 1);
  }
  line(img, f.margin, f.height - f.margin, f.width - f.margin, f.height - f.margin, black, 1);
  line(img, f.margin, f.margin, f.margin, f.height - f.margin, black, 1);
  return img;
}

}  // namespace detail

/// Line chart; series i uses palette colour i. A legend swatch per series
/// sits in the top-right corner in series order.
inline Image line_plot(const std::vector<Series>& series, int width = 640, int height = 400) {
  const auto f = detail::frame_for(series, width, height);
  Image img = detail::axes(f);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& c = detail::palette(s);
    const auto& S = series[s];
    for (std::size_t i = 1; i < S.x.size(); ++i)
      if (std::isfinite(S.y[i - 1]) && std::isfinite(S.y[i]))
        detail::line(img, f.px(S.x[i - 1]), f.py(S.y[i - 1]), f.px(S.x[i]), f.py(S.y[i]), c);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 16; ++x) detail::put(img, width - f.margin - 16 + x, 8 + int(s) * 12 + y, c);
  }
  return img;
}

/// Scatter plot with 5x5 markers.
inline Image scatter_plot(const std::vector<Series>& series, int width = 500, int height = 500) {
  const auto f = detail::frame_for(series, width, height);
  Image img = detail::axes(f);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& c = detail::palette(s);
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      const int cx = int(f.px(series[s].x[i])), cy = int(f.py(series[s].y[i]));
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) detail::put(img, cx + dx, cy + dy, c);
    }
  }
  return img;
}

/// Long-format CSV: series,x,y.
inline void write_series_csv(const std::string& path, const std::vector<Series>& series) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "series,x,y\n";
  out.precision(17);
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) out << s.name << "," << s.x[i] << "," << s.y[i] << "\n";
}

}  // namespace kid
