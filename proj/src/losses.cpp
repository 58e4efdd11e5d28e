#include "handfit/losses.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

#include "handfit/encoders.hpp"
#include "handfit/image.hpp"

namespace handfit {

namespace {

constexpr double kSurrogateDelta = 1e-6;

Tensor filter(const Tensor& x, const Tensor& k) { return ag::filter2d_replicate(ag::constant(x), k)->val(); }

std::shared_ptr<const std::vector<std::size_t>> crop_index(int w, const Box& box) {
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(static_cast<std::size_t>(box.area()));
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) idx->push_back(static_cast<std::size_t>(y) * w + x);
  return idx;
}

}  // namespace

ag::Var noise_loss(const ag::Var& eps, const ag::Var& eps_hat) { return ag::mse(eps_hat, eps); }

double noise_loss(const Tensor& eps, const Tensor& eps_hat) {
  return noise_loss(ag::constant(eps), ag::constant(eps_hat))->val()[0];
}

Tensor gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  const int n = 2 * r + 1;
  Tensor k({n, n});
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * sigma * sigma));
      k.at(i, j) = v;
      s += v;
    }
  k *= 1.0 / s;
  return k;
}

Tensor sobel_x_kernel() { return Tensor({3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1}); }
Tensor sobel_y_kernel() { return Tensor({3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1}); }

Tensor canny(const Tensor& gray, const EdgeConfig& cfg) {
  cfg.validate();
  if (gray.rank() != 2) throw ShapeError("canny: expected [H, W] input");
  const int h = gray.dim(0), w = gray.dim(1);
  const Tensor blurred = filter(gray, gaussian_kernel(cfg.gaussian_sigma));
  const Tensor gx = filter(blurred, sobel_x_kernel());
  const Tensor gy = filter(blurred, sobel_y_kernel());
  Tensor mag({h, w});
  double mx = 0.0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    mx = std::max(mx, mag[i]);
  }
  Tensor edges({h, w}, 0.0);
  // Rounding noise on a flat image is not an edge.
  if (mx < 1e-9) return edges;

  // Neighbour offsets along the gradient for the four orientation bins.
  constexpr int dx[4] = {1, 1, 0, -1};
  constexpr int dy[4] = {0, 1, 1, 1};
  auto at = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag.at(y, x); };
  Tensor nms({h, w}, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double m = mag.at(y, x);
      if (m == 0.0) continue;
      double deg = std::atan2(gy.at(y, x), gx.at(y, x)) * 180.0 / M_PI;
      if (deg < 0) deg += 180.0;
      const int bin = static_cast<int>(std::floor((deg + 22.5) / 45.0)) % 4;
      // Strict on the backward side, non-strict on the forward side so
      // symmetric plateaus keep exactly one pixel.
      if (m > at(y - dy[bin], x - dx[bin]) && m >= at(y + dy[bin], x + dx[bin])) nms.at(y, x) = m;
    }

  const double lo = cfg.canny_low * mx, hi = cfg.canny_high * mx;
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (nms.at(y, x) > hi) {
        edges.at(y, x) = 1.0;
        queue.emplace_back(y, x);
      }
  while (!queue.empty()) {
    const auto [y, x] = queue.front();
    queue.pop_front();
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox) {
        const int ny = y + oy, nx = x + ox;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w || edges.at(ny, nx) != 0.0) continue;
        if (nms.at(ny, nx) > lo) {
          edges.at(ny, nx) = 1.0;
          queue.emplace_back(ny, nx);
        }
      }
  }
  return edges;
}

ag::Var edge_surrogate(const ag::Var& gray, const EdgeConfig& cfg) {
  cfg.validate();
  if (gray->shape().size() != 2) throw ShapeError("edge_surrogate: expected [H, W] input");
  const ag::Var blurred = ag::filter2d_replicate(gray, gaussian_kernel(cfg.gaussian_sigma));
  const ag::Var mag = ag::smooth_magnitude(ag::filter2d_replicate(blurred, sobel_x_kernel()),
                                           ag::filter2d_replicate(blurred, sobel_y_kernel()), kSurrogateDelta);
  return ag::normalize_by_max(mag, 1e-8);
}

Tensor edge_surrogate(const Tensor& gray, const EdgeConfig& cfg) { return edge_surrogate(ag::constant(gray), cfg)->val(); }

std::vector<Box> hand_boxes(const HandParams& params) {
  std::vector<Box> out;
  for (const auto& h : params.hands)
    if (!h.is_filler()) out.push_back(h.box);
  return out;
}

HandCannyTerm hand_canny_term(const Tensor& z_t, const ag::Var& eps_hat, int t, int R_t, const NoiseSchedule& sched,
                              const std::vector<Box>& boxes, const Tensor& gt_image, const EdgeConfig& cfg) {
  HandCannyTerm term;
  if (t > R_t || boxes.empty()) {
    term.sum = ag::constant(Tensor({1}, 0.0));
    return term;
  }
  const int h = gt_image.dim(0), w = gt_image.dim(1);
  for (const Box& b : boxes)
    if (b.empty() || b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h)
      throw std::out_of_range("hand_canny_loss: box outside image");

  const ag::Var z0 = predict_z0(ag::constant(z_t), eps_hat, t, sched);
  const ag::Var image = decode_latent(z0);
  const ag::Var gray = ag::reshape(ag::matmul(image, ag::constant(Tensor({3, 1}, {0.299, 0.587, 0.114}))), {h, w});
  const Tensor gt_gray = to_gray(gt_image);
  std::vector<ag::Var> per_crop;
  for (const Box& b : boxes) {
    const auto idx = crop_index(w, b);
    const Shape cs{b.height(), b.width()};
    const ag::Var gen = ag::gather(gray, idx, cs);
    const Tensor gt = crop_box(gt_gray, b);
    ag::Var gen_edges = edge_surrogate(gen, cfg);
    Tensor gt_edges;
    if (cfg.mode == EdgeMode::CannyHard) {
      gen_edges = ag::straight_through(canny(gen->val(), cfg), gen_edges);
      gt_edges = canny(gt, cfg);
    } else {
      gt_edges = edge_surrogate(gt, cfg);
    }
    per_crop.push_back(ag::mse(gen_edges, ag::constant(std::move(gt_edges))));
  }
  term.sum = ag::sum(ag::concat_rows(per_crop));
  term.crops = static_cast<int>(per_crop.size());
  return term;
}

ag::Var hand_canny_loss(const Tensor& z_t, const ag::Var& eps_hat, int t, int R_t, const NoiseSchedule& sched,
                        const std::vector<Box>& boxes, const Tensor& gt_image, const EdgeConfig& cfg) {
  HandCannyTerm term = hand_canny_term(z_t, eps_hat, t, R_t, sched, boxes, gt_image, cfg);
  if (term.crops == 0) return term.sum;
  return ag::scale(term.sum, 1.0 / term.crops);
}

ag::Var total_loss(const ag::Var& noise, const ag::Var& hand, double lambda_hand) {
  if (lambda_hand < 0.0) throw std::invalid_argument("total_loss: lambda_hand must be non-negative");
  return ag::add(noise, ag::scale(hand, lambda_hand));
}

}  // namespace handfit
