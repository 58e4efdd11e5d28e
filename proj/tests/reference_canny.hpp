#pragma once

// Plain-loop Canny used as an oracle for the library implementation. It
// shares the conventions (clamped borders, radius ceil(3 sigma) Gaussian,
// 4-bin orientation, thresholds relative to the peak magnitude, 8-connected
// hysteresis) but none of the code.

#include <cmath>
#include <vector>

namespace handfit::testing {

struct Grid {
  int h = 0, w = 0;
  std::vector<double> v;
  Grid(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0.0) {}
  double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  double clamped(int y, int x) const {
    y = y < 0 ? 0 : (y >= h ? h - 1 : y);
    x = x < 0 ? 0 : (x >= w ? w - 1 : x);
    return (*this)(y, x);
  }
  double padded(int y, int x) const { return (y < 0 || x < 0 || y >= h || x >= w) ? 0.0 : (*this)(y, x); }
};

inline Grid reference_canny(const Grid& img, double sigma, double low, double high) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k1(2 * r + 1);
  double total = 0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) total += std::exp(-(i * i + j * j) / (2 * sigma * sigma));

  Grid blur(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) acc += std::exp(-(i * i + j * j) / (2 * sigma * sigma)) / total * img.clamped(y + i, x + j);
      blur(y, x) = acc;
    }

  Grid gx(img.h, img.w), gy(img.h, img.w), mag(img.h, img.w);
  double peak = 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto b = [&](int dy, int dx) { return blur.clamped(y + dy, x + dx); };
      gx(y, x) = b(-1, 1) + 2 * b(0, 1) + b(1, 1) - b(-1, -1) - 2 * b(0, -1) - b(1, -1);
      gy(y, x) = b(1, -1) + 2 * b(1, 0) + b(1, 1) - b(-1, -1) - 2 * b(-1, 0) - b(-1, 1);
      mag(y, x) = std::hypot(gx(y, x), gy(y, x));
      if (mag(y, x) > peak) peak = mag(y, x);
    }

  Grid out(img.h, img.w);
  if (peak < 1e-9) return out;  // numerically flat

  // Orientation bin from the slope instead of an angle.
  const double t1 = std::tan(M_PI / 8), t3 = std::tan(3 * M_PI / 8);
  Grid thin(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double m = mag(y, x);
      if (m == 0) continue;
      double ux = gx(y, x), uy = gy(y, x);
      if (uy < 0 || (uy == 0 && ux < 0)) ux = -ux, uy = -uy;  // fold into [0, 180)
      int sx, sy;
      if (std::abs(uy) < t1 * std::abs(ux)) sx = 1, sy = 0;
      else if (std::abs(uy) >= t3 * std::abs(ux)) sx = 0, sy = 1;
      else if (ux > 0) sx = 1, sy = 1;
      else sx = -1, sy = 1;
      if (m > mag.padded(y - sy, x - sx) && m >= mag.padded(y + sy, x + sx)) thin(y, x) = m;
    }

  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      if (thin(y, x) > high * peak) stack.push_back({y, x}), out(y, x) = 1;
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= img.h || nx >= img.w || out(ny, nx) != 0) continue;
        if (thin(ny, nx) > low * peak) out(ny, nx) = 1, stack.push_back({ny, nx});
      }
  }
  return out;
}

}  // namespace handfit::testing
