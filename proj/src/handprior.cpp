#include "handfit/handprior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace handfit {

SingleHand SingleHand::filler(int height, int width) {
  SingleHand h;
  h.type = HandType::Filler;
  h.vertices.assign(kHandVertices, Vec3{0.0, 0.0, 0.0});
  for (auto& r : h.rotations) r.fill(0.0);
  h.mask = Tensor(Shape{height, width}, 0.0);
  return h;
}

int HandParams::count() const {
  int n = 0;
  for (const auto& h : hands)
    if (!h.is_filler()) ++n;
  return n;
}

std::optional<std::string> check_single_hand(const SingleHand& h, int height, int width) {
  if (h.mask.shape() != Shape{height, width}) return "mask shape " + shape_str(h.mask.shape());
  if (h.vertices.size() != static_cast<std::size_t>(kHandVertices)) return "vertex count " + std::to_string(h.vertices.size());
  for (double m : h.mask.values())
    if (m != 0.0 && m != 1.0) return std::string("mask is not binary");
  if (h.is_filler()) {
    for (const auto& v : h.vertices)
      if (v[0] != 0.0 || v[1] != 0.0 || v[2] != 0.0) return std::string("filler has nonzero vertices");
    for (const auto& j : h.joints)
      if (j[0] != 0.0 || j[1] != 0.0) return std::string("filler has nonzero joints");
    for (const auto& r : h.rotations)
      for (double x : r)
        if (x != 0.0) return std::string("filler has nonzero rotations");
    if (max_abs(h.mask) != 0.0) return std::string("filler has nonzero mask");
    if (!(h.box == Box{})) return std::string("filler has nonzero box");
    return std::nullopt;
  }
  if (h.type != HandType::Left && h.type != HandType::Right) return std::string("invalid hand type");
  if (h.box.empty() || h.box.x0 < 0 || h.box.y0 < 0 || h.box.x1 > width || h.box.y1 > height)
    return std::string("box outside image or empty");
  for (std::size_t i = 0; i < h.rotations.size(); ++i)
    if (!is_rotation(h.rotations[i])) return "rotation " + std::to_string(i) + " is not a proper rotation";
  for (std::size_t i = 0; i < h.joints.size(); ++i)
    if (!h.box.contains(h.joints[i][0], h.joints[i][1])) return "joint " + std::to_string(i) + " outside box";
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (h.mask.at(y, x) != 0.0 && !h.box.contains(x, y)) return std::string("mask support outside box");
  return std::nullopt;
}

std::optional<std::string> check_hand_params(const HandParams& p) {
  for (int i = 0; i < kHandSlots; ++i)
    if (auto e = check_single_hand(p.hands[i], p.height, p.width)) return "slot " + std::to_string(i) + ": " + *e;
  return std::nullopt;
}

HandParams pad_hands(std::vector<SingleHand> detected, int height, int width) {
  std::stable_sort(detected.begin(), detected.end(), [](const SingleHand& a, const SingleHand& b) {
    if (a.box.area() != b.box.area()) return a.box.area() > b.box.area();
    return a.box.x0 < b.box.x0;
  });
  HandParams p;
  p.height = height;
  p.width = width;
  for (int i = 0; i < kHandSlots; ++i)
    p.hands[i] = i < static_cast<int>(detected.size()) ? std::move(detected[i]) : SingleHand::filler(height, width);
  return p;
}

BasisPointSet BasisPointSet::make(int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("basis point set needs at least one point");
  BasisPointSet b;
  b.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (static_cast<int>(b.points.size()) < k) {
    Vec3 p{u(rng), u(rng), u(rng)};
    if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0) b.points.push_back(p);
  }
  return b;
}

std::vector<Vec3> normalize_cloud(const std::vector<Vec3>& vertices) {
  std::vector<Vec3> out = vertices;
  if (out.empty()) return out;
  Vec3 c{0, 0, 0};
  for (const auto& v : out)
    for (int i = 0; i < 3; ++i) c[i] += v[i];
  for (double& x : c) x /= static_cast<double>(out.size());
  double mx = 0.0;
  for (auto& v : out) {
    for (int i = 0; i < 3; ++i) v[i] -= c[i];
    mx = std::max(mx, std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
  }
  if (mx == 0.0) {
    for (auto& v : out) v = {0, 0, 0};
    return out;
  }
  for (auto& v : out)
    for (double& x : v) x /= mx;
  return out;
}

std::vector<double> bps_encode(const std::vector<Vec3>& vertices, const BasisPointSet& basis) {
  std::vector<double> out(basis.points.size(), 0.0);
  if (vertices.empty()) throw std::invalid_argument("bps_encode: empty vertex cloud");
  for (std::size_t k = 0; k < basis.points.size(); ++k) {
    const auto& b = basis.points[k];
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : vertices) {
      const double dx = v[0] - b[0], dy = v[1] - b[1], dz = v[2] - b[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out[k] = std::sqrt(best);
  }
  return out;
}

std::vector<double> bps_encode_hand(const SingleHand& hand, const BasisPointSet& basis) {
  if (hand.is_filler()) return std::vector<double>(basis.points.size(), 0.0);
  return bps_encode(normalize_cloud(hand.vertices), basis);
}

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

bool is_rotation(const Mat3& r, double tol) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += r[k * 3 + i] * r[k * 3 + j];
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  return std::abs(det - 1.0) <= tol;
}

std::array<double, 6> rot_to_6d(const Mat3& r) {
  if (!is_rotation(r)) throw std::invalid_argument("rot_to_6d: input is not a rotation matrix");
  return {r[0], r[3], r[6], r[1], r[4], r[7]};
}

Mat3 rot_from_6d(const std::array<double, 6>& v) {
  Vec3 a{v[0], v[1], v[2]}, b{v[3], v[4], v[5]};
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  if (!(na > 1e-12)) throw std::invalid_argument("rot_from_6d: first column is zero");
  for (double& x : a) x /= na;
  const double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  for (int i = 0; i < 3; ++i) b[i] -= d * a[i];
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  if (!(nb > 1e-12)) throw std::invalid_argument("rot_from_6d: columns are parallel");
  for (double& x : b) x /= nb;
  const Vec3 c{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  return {a[0], b[0], c[0], a[1], b[1], c[1], a[2], b[2], c[2]};
}

Mat3 rot_z(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {c, -s, 0, s, c, 0, 0, 0, 1};
}

Mat3 rot_x(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {1, 0, 0, 0, c, -s, 0, s, c};
}

Tensor union_mask(const HandParams& params) {
  Tensor out(Shape{params.height, params.width}, 0.0);
  for (const auto& h : params.hands) {
    require_same_shape(out, h.mask, "union_mask");
    for (std::size_t i = 0; i < out.size(); ++i)
      if (h.mask[i] != 0.0) out[i] = 1.0;
  }
  return out;
}

Tensor downsample_gate(const Tensor& mask, int factor) {
  if (mask.rank() != 2) throw ShapeError("downsample_gate: expected [H, W] mask");
  if (factor < 1 || mask.dim(0) % factor || mask.dim(1) % factor)
    throw ShapeError("downsample_gate: factor " + std::to_string(factor) + " does not divide " + shape_str(mask.shape()));
  const int h = mask.dim(0) / factor, w = mask.dim(1) / factor;
  Tensor out(Shape{h, w}, 0.0);
  for (int y = 0; y < mask.dim(0); ++y)
    for (int x = 0; x < mask.dim(1); ++x)
      if (mask.at(y, x) != 0.0) out.at(y / factor, x / factor) = 1.0;
  return out;
}

Tensor crop_box(const Tensor& image, const Box& box) {
  if (image.rank() != 2 && image.rank() != 3) throw ShapeError("crop_box: expected [H, W] or [H, W, C]");
  const int h = image.dim(0), w = image.dim(1), c = image.rank() == 3 ? image.dim(2) : 1;
  if (box.empty()) throw std::invalid_argument("crop_box: empty box");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > w || box.y1 > h)
    throw std::out_of_range("crop_box: box outside " + shape_str(image.shape()));
  Shape s = image.rank() == 3 ? Shape{box.height(), box.width(), c} : Shape{box.height(), box.width()};
  Tensor out(s);
  std::size_t o = 0;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x)
      for (int ch = 0; ch < c; ++ch) out[o++] = image[(static_cast<std::size_t>(y) * w + x) * c + ch];
  return out;
}

}  // namespace handfit
