#include "handfit/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "handfit/image.hpp"

namespace handfit {

namespace {

const std::array<std::array<double, 3>, 6> kPalette = {{{0.12, 0.47, 0.71},
                                                       {1.00, 0.50, 0.05},
                                                       {0.17, 0.63, 0.17},
                                                       {0.84, 0.15, 0.16},
                                                       {0.58, 0.40, 0.74},
                                                       {0.55, 0.34, 0.29}}};

void dot(Tensor& img, int x, int y, const std::array<double, 3>& c) {
  if (x < 0 || y < 0 || y >= img.dim(0) || x >= img.dim(1)) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

void segment(Tensor& img, double x0, double y0, double x1, double y1, const std::array<double, 3>& c) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    dot(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

}  // namespace

Tensor render_line_plot(const std::vector<PlotSeries>& series, int width, int height) {
  if (width < 40 || height < 40) throw std::invalid_argument("plot canvas too small");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot series " + s.label + " has mismatched x/y");
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y)
      if (std::isfinite(v)) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!(xmax >= xmin)) xmin = 0, xmax = 1;
  if (!(ymax >= ymin)) ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;

  Tensor img({height, width, 3}, 1.0);
  const int left = 24, right = width - 10, top = 10, bottom = height - 20;
  const std::array<double, 3> axis = {0.0, 0.0, 0.0}, grid = {0.88, 0.88, 0.88};
  for (int i = 1; i < 4; ++i) {
    const double gy = top + (bottom - top) * i / 4.0;
    segment(img, left, gy, right, gy, grid);
  }
  segment(img, left, top, left, bottom, axis);
  segment(img, left, bottom, right, bottom, axis);
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& c = kPalette[si % kPalette.size()];
    const PlotSeries& s = series[si];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double x = px(s.x[i]), y = py(s.y[i]);
      if (i > 0 && std::isfinite(s.y[i - 1])) segment(img, px(s.x[i - 1]), py(s.y[i - 1]), x, y, c);
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
          dot(img, static_cast<int>(std::lround(x)) + dx, static_cast<int>(std::lround(y)) + dy, c);
    }
    // Legend swatch per series along the bottom edge.
    const int sx = left + 4 + static_cast<int>(si) * 16;
    for (int dy = 0; dy < 6; ++dy)
      for (int dx = 0; dx < 10; ++dx) dot(img, sx + dx, height - 10 + dy, c);
  }
  return img;
}

void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series) {
  write_png(path, render_line_plot(series));
}

}  // namespace handfit
