#include "handfit/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "handfit/image.hpp"

namespace handfit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct P2 {
  double x = 0, y = 0;
};

P2 operator+(P2 a, P2 b) { return {a.x + b.x, a.y + b.y}; }
P2 operator-(P2 a, P2 b) { return {a.x - b.x, a.y - b.y}; }
P2 operator*(P2 a, double s) { return {a.x * s, a.y * s}; }
P2 dir(double angle) { return {std::cos(angle), std::sin(angle)}; }

constexpr double kPi = std::numbers::pi;
double deg(double d) { return d * kPi / 180.0; }

double seg_dist(P2 p, P2 a, P2 b) {
  P2 ab = b - a, ap = p - a;
  double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0 ? std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0) : 0.0;
  P2 q = a + ab * t;
  return std::hypot(p.x - q.x, p.y - q.y);
}

bool in_polygon(P2 p, const std::vector<P2>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const P2& a = poly[i];
    const P2& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

template <class F>
void for_pixels(int s, F&& f) {
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) f(x, y, P2{static_cast<double>(x), static_cast<double>(y)});
}

void paint_capsule(Tensor& mask, P2 a, P2 b, double r) {
  int s = mask.dim(0);
  for_pixels(s, [&](int x, int y, P2 p) {
    if (seg_dist(p, a, b) <= r) mask.at(y, x) = 1.0;
  });
}

void paint_disc(Tensor& mask, P2 c, double r) { paint_capsule(mask, c, c, r); }

Tensor dilate(const Tensor& mask, int r) {
  int h = mask.dim(0), w = mask.dim(1);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.at(y, x) <= 0.5) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) out.at(yy, xx) = 1.0;
        }
    }
  return out;
}

using Rgb = std::array<double, 3>;

void set_px(Tensor& img, int x, int y, const Rgb& c) {
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

struct Texture {
  int kind = 0;
  double angle = 0;
  double period = 6;
  Rgb a{}, b{};

  Rgb at(double x, double y) const {
    bool on;
    if (kind == 0) {
      double u = (x * std::cos(angle) + y * std::sin(angle)) / period;
      on = u - std::floor(u) < 0.5;
    } else {
      long cx = static_cast<long>(std::floor(x / period));
      long cy = static_cast<long>(std::floor(y / period));
      on = ((cx + cy) % 2 + 2) % 2 == 0;
    }
    return on ? a : b;
  }
};

// Per-hand geometry before rasterisation.
struct HandGeom {
  HandType type = HandType::Right;
  P2 palm;
  double palm_r = 0;
  std::array<P2, kHandJoints> joints;
  std::array<Mat3, kRotJoints> rotations;
  double finger_r = 0;
};

// Joint order: wrist, then four joints per finger (thumb, index, middle,
// ring, little), base to tip.
HandGeom make_hand(std::mt19937_64& rng, HandType type, P2 wrist_target, double u, int s) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  HandGeom g;
  g.type = type;
  g.palm_r = uni(4.5, 5.5) * u;
  g.finger_r = 1.1 * u;
  double sign = type == HandType::Right ? 1.0 : -1.0;
  double phi = deg(-90.0 + uni(-35.0, 35.0));
  P2 d = dir(phi);
  g.palm = wrist_target + d * (0.7 * g.palm_r);

  auto clampi = [&](P2 p) {
    return P2{std::clamp(std::round(p.x), 0.0, s - 1.0), std::clamp(std::round(p.y), 0.0, s - 1.0)};
  };
  g.joints[0] = clampi(g.palm - d * (0.7 * g.palm_r));
  g.rotations[0] = rot_z(phi + kPi / 2);

  const double base_off[5] = {-75, -35, -10, 15, 40};
  const double spread[5] = {-45, -12, 0, 10, 22};
  const double len_scale[5] = {0.75, 1.0, 1.1, 1.0, 0.8};
  const double seg_len[3] = {2.4, 2.0, 1.7};
  for (int f = 0; f < 5; ++f) {
    P2 p = g.palm + dir(phi + sign * deg(base_off[f])) * (0.85 * g.palm_r);
    double rel0 = sign * deg(spread[f] + uni(-8.0, 8.0));
    double theta = phi + rel0;
    int j = 1 + 4 * f;
    g.joints[j] = clampi(p);
    g.rotations[1 + 3 * f] = rot_z(rel0);
    for (int k = 0; k < 3; ++k) {
      if (k > 0) {
        double bend = -sign * deg(uni(0.0, 30.0));
        theta += bend;
        g.rotations[1 + 3 * f + k] = rot_z(bend);
      }
      p = p + dir(theta) * (seg_len[k] * len_scale[f] * u);
      g.joints[j + k + 1] = clampi(p);
    }
  }
  return g;
}

Tensor hand_mask(const HandGeom& g, int s) {
  Tensor m({s, s});
  paint_disc(m, g.palm, g.palm_r);
  for (int f = 0; f < 5; ++f) {
    int j = 1 + 4 * f;
    for (int k = 0; k < 3; ++k) paint_capsule(m, g.joints[j + k], g.joints[j + k + 1], g.finger_r);
    paint_capsule(m, g.joints[0], g.joints[j], 0.5);
  }
  return m;
}

// Dome-shaped height over the hand silhouette.
Tensor hand_height(const HandGeom& g, const Tensor& mask) {
  int s = mask.dim(0);
  Tensor h({s, s});
  for_pixels(s, [&](int x, int y, P2 p) {
    if (mask.at(y, x) <= 0.5) return;
    double best = 0.15 * g.palm_r;
    double dp = std::hypot(p.x - g.palm.x, p.y - g.palm.y) / g.palm_r;
    if (dp < 1) best = std::max(best, 0.6 * g.palm_r * std::sqrt(1 - dp * dp) + 0.15 * g.palm_r);
    for (int f = 0; f < 5; ++f) {
      int j = 1 + 4 * f;
      for (int k = 0; k < 3; ++k) {
        double dd = seg_dist(p, g.joints[j + k], g.joints[j + k + 1]) / g.finger_r;
        if (dd < 1) best = std::max(best, g.finger_r * std::sqrt(1 - dd * dd) + 0.15 * g.palm_r);
      }
    }
    h.at(y, x) = best;
  });
  return h;
}

Box mask_box(const Tensor& m, int pad) {
  int h = m.dim(0), w = m.dim(1);
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (m.at(y, x) > 0.5) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {};
  return {std::max(0, x0 - pad), std::max(0, y0 - pad), std::min(w, x1 + 1 + pad), std::min(h, y1 + 1 + pad)};
}

struct Layout {
  double cx, ys, sw, ww;
  std::vector<P2> torso;
  P2 head;
  double head_r;
};

Layout body_layout(std::mt19937_64& rng, int s) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  Layout L;
  L.cx = s * (0.5 + uni(-0.04, 0.04));
  L.ys = s * (0.30 + uni(-0.03, 0.03));
  L.sw = s * (0.24 + uni(-0.02, 0.02));
  L.ww = s * (0.20 + uni(-0.02, 0.02));
  L.torso = {{L.cx - L.sw, L.ys}, {L.cx + L.sw, L.ys}, {L.cx + L.ww, s + 1.0}, {L.cx - L.ww, s + 1.0}};
  L.head = {L.cx, L.ys - 0.12 * s};
  L.head_r = 0.09 * s;
  return L;
}

Tensor torso_mask(const Layout& L, int s) {
  Tensor m({s, s});
  for_pixels(s, [&](int x, int y, P2 p) {
    if (in_polygon(p, L.torso)) m.at(y, x) = 1.0;
  });
  return m;
}

const Rgb kMarker = {1.0, 0.0, 1.0};

std::array<Rgb, 5> finger_colors() {
  return {{{1, 0.2, 0.2}, {1, 0.8, 0.1}, {0.2, 1, 0.2}, {0.2, 0.6, 1}, {0.8, 0.3, 1}}};
}

}  // namespace

void SceneConfig::validate() const {
  if (size < 32) throw std::invalid_argument("scene size must be at least 32");
  if (hands < -1 || hands > kHandSlots) throw std::invalid_argument("scene hand count must be -1, 0, 1 or 2");
  if (!(occlusion_prob >= 0.0 && occlusion_prob <= 1.0))
    throw std::invalid_argument("occlusion_prob must lie in [0, 1]");
}

Tensor garment_region(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Layout L = body_layout(rng, cfg.size);
  return torso_mask(L, cfg.size);
}

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  const int s = cfg.size;
  const double u = s / 64.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto color = [&](double lo, double hi) { return Rgb{uni(lo, hi), uni(lo, hi), uni(lo, hi)}; };

  Layout L = body_layout(rng, s);
  Texture tex;
  tex.kind = unit(rng) < 0.5 ? 0 : 1;
  tex.angle = deg(45.0 * std::floor(uni(0.0, 4.0)));
  tex.period = uni(4.0, 8.0) * u;
  tex.a = color(0.05, 0.95);
  do tex.b = color(0.05, 0.95);
  while (std::abs(tex.a[0] - tex.b[0]) + std::abs(tex.a[1] - tex.b[1]) + std::abs(tex.a[2] - tex.b[2]) < 0.6);
  Rgb bg0 = color(0.3, 0.9), bg1 = color(0.3, 0.9);
  Rgb skin = {uni(0.55, 0.95), 0, 0};
  skin[1] = skin[0] * uni(0.65, 0.8);
  skin[2] = skin[0] * uni(0.45, 0.6);
  Rgb hair = color(0.05, 0.3);

  int n_hands = cfg.hands;
  if (n_hands < 0) {
    double r = unit(rng);
    n_hands = r < 0.15 ? 0 : (r < 0.5 ? 1 : 2);
  }
  // Image-left hand is the person's right hand.
  std::vector<int> sides;
  if (n_hands == 2) sides = {-1, 1};
  else if (n_hands == 1) sides = {unit(rng) < 0.5 ? -1 : 1};

  std::vector<HandGeom> geoms;
  std::array<P2, 2> shoulder = {P2{L.cx - 0.9 * L.sw, L.ys + 0.03 * s}, P2{L.cx + 0.9 * L.sw, L.ys + 0.03 * s}};
  std::array<std::vector<std::pair<P2, P2>>, 2> arms;
  for (int side : sides) {
    bool occ = unit(rng) < cfg.occlusion_prob;
    P2 wrist;
    if (occ) wrist = {L.cx + side * uni(0.04, 0.16) * s, uni(0.5, 0.8) * s};
    else wrist = {L.cx + side * (L.sw + uni(0.05, 0.09) * s), uni(0.6, 0.85) * s};
    wrist.x = std::clamp(wrist.x, 0.1 * s, 0.9 * s);
    HandType type = side < 0 ? HandType::Right : HandType::Left;
    geoms.push_back(make_hand(rng, type, wrist, u, s));
    int a = side < 0 ? 0 : 1;
    P2 sh = shoulder[a];
    P2 elbow = {sh.x + side * 0.08 * s, 0.5 * (sh.y + wrist.y) + 0.08 * s};
    if (occ) elbow.x = sh.x + side * 0.1 * s;
    arms[a] = {{sh, elbow}, {elbow, geoms.back().joints[0]}};
  }
  for (int a = 0; a < 2; ++a)
    if (arms[a].empty()) {
      double side = a == 0 ? -1.0 : 1.0;
      arms[a] = {{shoulder[a], P2{shoulder[a].x + side * 0.05 * s, s + 6.0}}};
    }

  // Masks.
  Tensor torso = torso_mask(L, s);
  Tensor arm_m({s, s});
  for (auto& arm : arms)
    for (auto& [p, q] : arm) paint_capsule(arm_m, p, q, 2.2 * u);
  Tensor head_m({s, s});
  paint_disc(head_m, L.head, L.head_r);

  std::vector<SingleHand> hands;
  std::vector<Tensor> heights;
  for (const HandGeom& g : geoms) {
    SingleHand h;
    h.type = g.type;
    h.mask = hand_mask(g, s);
    h.box = mask_box(h.mask, 2);
    for (int j = 0; j < kHandJoints; ++j) h.joints[j] = {g.joints[j].x, g.joints[j].y};
    h.rotations = g.rotations;
    Tensor height = hand_height(g, h.mask);
    std::vector<std::pair<int, int>> pix;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (h.mask.at(y, x) > 0.5) pix.emplace_back(x, y);
    std::uniform_int_distribution<std::size_t> pick(0, pix.size() - 1);
    h.vertices.resize(kHandVertices);
    for (auto& v : h.vertices) {
      auto [x, y] = pix[pick(rng)];
      v = {(x + uni(-0.5, 0.5)) / s, (y + uni(-0.5, 0.5)) / s, height.at(y, x) / s};
    }
    hands.push_back(std::move(h));
    heights.push_back(std::move(height));
  }

  SceneSample out;
  out.meta = {seed, tex.kind};
  out.hands = pad_hands(hands, s, s);

  // Person image.
  Tensor person({s, s, 3});
  for_pixels(s, [&](int x, int y, P2) {
    double t = y / (s - 1.0);
    Rgb c;
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(bg0[k] * (1 - t) + bg1[k] * t + 0.05 * x / s, 0.0, 1.0);
    if (torso.at(y, x) > 0.5) c = tex.at(x - L.cx, y - L.ys);
    if (head_m.at(y, x) > 0.5) c = y < L.head.y - 0.3 * L.head_r ? hair : skin;
    if (arm_m.at(y, x) > 0.5) c = {skin[0] * 0.92, skin[1] * 0.92, skin[2] * 0.92};
    set_px(person, x, y, c);
  });
  Tensor hand_union({s, s});
  for (std::size_t i = 0; i < hands.size(); ++i) {
    const Tensor& m = hands[i].mask;
    double hmax = max_abs(heights[i]);
    for_pixels(s, [&](int x, int y, P2) {
      if (m.at(y, x) <= 0.5) return;
      double shade = 0.75 + 0.25 * heights[i].at(y, x) / hmax;
      set_px(person, x, y, {skin[0] * shade, skin[1] * shade, skin[2] * shade});
      hand_union.at(y, x) = 1.0;
    });
  }
  Tensor markers({s, s});
  for (const SingleHand& h : hands)
    for (const auto& j : h.joints)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int x = static_cast<int>(j[0]) + dx, y = static_cast<int>(j[1]) + dy;
          if (x < 0 || y < 0 || x >= s || y >= s) continue;
          set_px(person, x, y, kMarker);
          markers.at(y, x) = 1.0;
        }
  out.person = person;

  // Cloth-agnostic mask and image.
  Tensor arm_d = dilate(arm_m, 2);
  out.agnostic_mask = Tensor({s, s});
  for (std::size_t i = 0; i < out.agnostic_mask.size(); ++i) {
    bool in = torso[i] > 0.5 || arm_d[i] > 0.5;
    if (hand_union[i] > 0.5 || markers[i] > 0.5 || head_m[i] > 0.5) in = false;
    out.agnostic_mask[i] = in ? 1.0 : 0.0;
  }
  out.agnostic = person;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      if (out.agnostic_mask.at(y, x) > 0.5)
        for (int k = 0; k < 3; ++k) out.agnostic.at(y, x, k) = 0.5;

  // Garment laid flat at a canonical position.
  Tensor garment({s, s, 3}, 0.95);
  Layout G = L;
  G.cx = 0.5 * s;
  G.ys = 0.22 * s;
  G.torso = {{G.cx - L.sw, G.ys}, {G.cx + L.sw, G.ys}, {G.cx + L.ww, 0.95 * s}, {G.cx - L.ww, 0.95 * s}};
  for_pixels(s, [&](int x, int y, P2 p) {
    if (in_polygon(p, G.torso)) set_px(garment, x, y, tex.at(x - G.cx, y - G.ys));
  });
  out.garment = garment;

  // Pose maps.
  PoseMaps& pm = out.pose;
  pm.dwpose = Tensor({s, s, 3});
  auto line = [&](P2 a, P2 b, const Rgb& c) {
    Tensor m({s, s});
    paint_capsule(m, a, b, 0.75 * u);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (m.at(y, x) > 0.5) set_px(pm.dwpose, x, y, c);
  };
  P2 neck = {L.cx, L.ys};
  line(L.head, neck, {0.0, 0.0, 1.0});
  line(shoulder[0], shoulder[1], {1.0, 0.5, 0.0});
  for (int a = 0; a < 2; ++a)
    for (auto& [p, q] : arms[a]) line(p, q, a == 0 ? Rgb{0.0, 1.0, 1.0} : Rgb{1.0, 1.0, 0.0});
  auto fc = finger_colors();
  for (const HandGeom& g : geoms)
    for (int f = 0; f < 5; ++f) {
      int j = 1 + 4 * f;
      line(g.joints[0], g.joints[j], fc[f]);
      for (int k = 0; k < 3; ++k) line(g.joints[j + k], g.joints[j + k + 1], fc[f]);
    }

  pm.densepose = Tensor({s, s, 4});
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      int label = 0;
      if (torso.at(y, x) > 0.5 || head_m.at(y, x) > 0.5) label = 1;
      if (arm_m.at(y, x) > 0.5) label = 2;
      if (hand_union.at(y, x) > 0.5) label = 3;
      pm.densepose.at(y, x, label) = 1.0;
    }

  pm.hand_depth = Tensor({s, s, 1});
  double gmax = 0;
  for (const Tensor& h : heights) gmax = std::max(gmax, max_abs(h));
  for (const Tensor& h : heights)
    for (std::size_t i = 0; i < h.size(); ++i)
      pm.hand_depth[i] = std::max(pm.hand_depth[i], h[i] / gmax);
  return out;
}

std::optional<std::string> check_scene(const SceneSample& s) {
  if (s.person.rank() != 3 || s.person.dim(2) != 3) return "person must be [H, W, 3]";
  int h = s.person.dim(0), w = s.person.dim(1);
  Shape img{h, w, 3}, msk{h, w};
  if (s.garment.shape() != img) return "garment shape " + shape_str(s.garment.shape());
  if (s.agnostic.shape() != img) return "agnostic image shape " + shape_str(s.agnostic.shape());
  if (s.agnostic_mask.shape() != msk) return "agnostic mask shape " + shape_str(s.agnostic_mask.shape());
  if (s.pose.dwpose.shape() != img) return "dwpose shape " + shape_str(s.pose.dwpose.shape());
  if (s.pose.densepose.shape() != Shape{h, w, 4}) return "densepose shape " + shape_str(s.pose.densepose.shape());
  if (s.pose.hand_depth.shape() != Shape{h, w, 1}) return "hand depth shape " + shape_str(s.pose.hand_depth.shape());
  for (const Tensor* t : {&s.person, &s.garment, &s.agnostic, &s.pose.dwpose, &s.pose.hand_depth})
    for (double v : t->values())
      if (!(v >= 0.0 && v <= 1.0)) return "image value outside [0, 1]";
  for (double v : s.agnostic_mask.values())
    if (v != 0.0 && v != 1.0) return "agnostic mask is not binary";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int ones = 0;
      for (int k = 0; k < 4; ++k) {
        double v = s.pose.densepose.at(y, x, k);
        if (v != 0.0 && v != 1.0) return "densepose is not one-hot";
        ones += v == 1.0;
      }
      if (ones != 1) return "densepose is not one-hot";
      bool masked = s.agnostic_mask.at(y, x) == 1.0;
      for (int k = 0; k < 3; ++k) {
        double want = masked ? 0.5 : s.person.at(y, x, k);
        // Masked pixels tolerate 8-bit storage of the 0.5 fill.
        if (std::abs(s.agnostic.at(y, x, k) - want) > (masked ? 0.5 / 255.0 + 1e-9 : 1e-12))
          return "agnostic image disagrees with person and mask at (" + std::to_string(x) + ", " +
                 std::to_string(y) + ")";
      }
    }
  if (s.hands.height != h || s.hands.width != w) return "hand record extent differs from image";
  if (auto e = check_hand_params(s.hands)) return e;
  Tensor um = union_mask(s.hands);
  for (std::size_t i = 0; i < um.size(); ++i) {
    if (s.pose.hand_depth[i] > 0 && um[i] == 0.0) return "hand depth outside hand masks";
    if (um[i] > 0 && s.agnostic_mask[i] > 0) return "agnostic mask covers a hand pixel";
  }
  for (int k = 0; k < kHandSlots; ++k) {
    const SingleHand& hd = s.hands.hands[k];
    if (hd.is_filler()) continue;
    for (int j = 0; j < kHandJoints; ++j) {
      double x = hd.joints[j][0], y = hd.joints[j][1];
      int xi = static_cast<int>(std::lround(x)), yi = static_cast<int>(std::lround(y));
      if (xi < 0 || yi < 0 || xi >= w || yi >= h || hd.mask.at(yi, xi) != 1.0)
        return "hand " + std::to_string(k) + " joint " + std::to_string(j) + " is off its silhouette";
    }
  }
  return std::nullopt;
}

SceneSample make_pair(const SceneSample& sample, const Tensor& other_garment) {
  require_same_shape(sample.garment, other_garment, "make_pair garment");
  SceneSample out = sample;
  out.paired = out.paired && other_garment == sample.garment;
  out.garment = other_garment;
  return out;
}

Tensor composite(const Tensor& generated, const Tensor& person, const Tensor& mask) {
  require_same_shape(generated, person, "composite");
  int h = person.dim(0), w = person.dim(1), c = person.dim(2);
  if (mask.shape() != Shape{h, w}) throw ShapeError("composite mask must be [H, W]");
  Tensor out = person;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double m = mask.at(y, x);
      for (int k = 0; k < c; ++k) out.at(y, x, k) = generated.at(y, x, k) * m + person.at(y, x, k) * (1 - m);
    }
  return out;
}

// ---- serialisation ----

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw std::runtime_error(p.filename().string() + ": " + e.what());
  }
}

Tensor read_mask(const fs::path& p, int h, int w) {
  Tensor m = read_png(p);
  if (m.dim(2) != 1 || m.dim(0) != h || m.dim(1) != w)
    throw std::runtime_error(p.filename().string() + " has shape " + shape_str(m.shape()));
  m = squeeze_channel(m);
  for (double& v : m.values()) {
    if (v != 0.0 && v != 1.0) throw std::runtime_error(p.filename().string() + " is not binary");
  }
  return m;
}

Tensor read_rgb(const fs::path& p, int h, int w) {
  Tensor m = read_png(p);
  if (m.shape() != Shape{h, w, 3}) throw std::runtime_error(p.filename().string() + " has shape " + shape_str(m.shape()));
  return m;
}

}  // namespace

std::string sample_id(int index) {
  std::ostringstream os;
  os << "sample_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

void write_sample(const SceneSample& s, const fs::path& dir) {
  fs::create_directories(dir);
  int h = s.height(), w = s.width();
  write_png(dir / "person.png", s.person);
  write_png(dir / "garment.png", s.garment);
  write_png_1bit(dir / "agnostic_mask.png", s.agnostic_mask);
  write_png(dir / "agnostic.png", s.agnostic);
  write_png(dir / "dwpose.png", s.pose.dwpose);
  Tensor labels({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 4; ++k)
        if (s.pose.densepose.at(y, x, k) > 0.5) labels.at(y, x) = k * 85.0 / 255.0;
  write_png(dir / "densepose.png", labels);
  write_png(dir / "hand_depth.png", s.pose.hand_depth);

  json types = json::array(), verts = json::array(), joints = json::array(), rots = json::array(),
       boxes = json::array();
  for (int k = 0; k < kHandSlots; ++k) {
    const SingleHand& hd = s.hands.hands[k];
    write_png_1bit(dir / ("hand_mask_" + std::to_string(k) + ".png"), hd.mask);
    types.push_back(static_cast<int>(hd.type));
    json v = json::array();
    for (const Vec3& p : hd.vertices) v.push_back({p[0], p[1], p[2]});
    verts.push_back(v);
    json j = json::array();
    for (const auto& p : hd.joints) j.push_back({p[0], p[1]});
    joints.push_back(j);
    json r = json::array();
    for (const Mat3& m : hd.rotations)
      r.push_back({{m[0], m[1], m[2]}, {m[3], m[4], m[5]}, {m[6], m[7], m[8]}});
    rots.push_back(r);
    boxes.push_back({hd.box.x0, hd.box.y0, hd.box.x1, hd.box.y1});
  }
  json hj = {{"types", types}, {"vertices", verts}, {"joints2d", joints}, {"rotations", rots}, {"boxes", boxes},
             {"seed", s.meta.seed}, {"texture_id", s.meta.texture_id}, {"paired", s.paired}};
  write_text(dir / "hands.json", hj.dump());
}

SceneSample read_sample(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("missing sample directory");
  SceneSample s;
  Tensor person = read_png(dir / "person.png");
  if (person.rank() != 3 || person.dim(2) != 3) throw std::runtime_error("person.png is not RGB");
  int h = person.dim(0), w = person.dim(1);
  s.person = person;
  s.garment = read_rgb(dir / "garment.png", h, w);
  s.agnostic_mask = read_mask(dir / "agnostic_mask.png", h, w);
  s.agnostic = read_rgb(dir / "agnostic.png", h, w);
  s.pose.dwpose = read_rgb(dir / "dwpose.png", h, w);
  Tensor labels = read_png(dir / "densepose.png");
  if (labels.shape() != Shape{h, w, 1}) throw std::runtime_error("densepose.png has shape " + shape_str(labels.shape()));
  s.pose.densepose = Tensor({h, w, 4});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double code = labels.at(y, x, 0) * 255.0 / 85.0;
      int k = static_cast<int>(std::lround(code));
      if (std::abs(code - k) > 1e-6 || k < 0 || k > 3) throw std::runtime_error("densepose.png has an invalid label");
      s.pose.densepose.at(y, x, k) = 1.0;
    }
  s.pose.hand_depth = read_png(dir / "hand_depth.png");
  if (s.pose.hand_depth.shape() != Shape{h, w, 1}) throw std::runtime_error("hand_depth.png has wrong shape");

  json hj = read_json(dir / "hands.json");
  try {
    s.hands.height = h;
    s.hands.width = w;
    for (int k = 0; k < kHandSlots; ++k) {
      SingleHand& hd = s.hands.hands[k];
      int type = hj.at("types").at(k).get<int>();
      if (type < -1 || type > 1) throw std::runtime_error("hand type " + std::to_string(type) + " out of range");
      hd.type = static_cast<HandType>(type);
      hd.mask = read_mask(dir / ("hand_mask_" + std::to_string(k) + ".png"), h, w);
      for (const auto& v : hj.at("vertices").at(k)) hd.vertices.push_back({v.at(0), v.at(1), v.at(2)});
      const auto& jj = hj.at("joints2d").at(k);
      if (jj.size() != kHandJoints) throw std::runtime_error("joints2d must list 21 joints");
      for (int j = 0; j < kHandJoints; ++j) hd.joints[j] = {jj.at(j).at(0).get<double>(), jj.at(j).at(1).get<double>()};
      const auto& rr = hj.at("rotations").at(k);
      if (rr.size() != kRotJoints) throw std::runtime_error("rotations must list 16 matrices");
      for (int j = 0; j < kRotJoints; ++j)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) hd.rotations[j][a * 3 + b] = rr.at(j).at(a).at(b).get<double>();
      const auto& bx = hj.at("boxes").at(k);
      hd.box = {bx.at(0), bx.at(1), bx.at(2), bx.at(3)};
    }
    s.meta.seed = hj.value("seed", std::uint64_t{0});
    s.meta.texture_id = hj.value("texture_id", 0);
    s.paired = hj.value("paired", true);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("hands.json: ") + e.what());
  }
  if (auto err = check_scene(s)) throw std::runtime_error(*err);
  return s;
}

DatasetManifest write_dataset(const std::vector<SceneSample>& samples, const fs::path& root,
                              std::uint64_t generator_seed) {
  if (samples.empty()) throw std::invalid_argument("write_dataset needs at least one sample");
  fs::create_directories(root);
  DatasetManifest m;
  m.count = static_cast<int>(samples.size());
  m.height = samples[0].height();
  m.width = samples[0].width();
  m.seed = generator_seed;
  for (int i = 0; i < m.count; ++i) {
    const SceneSample& s = samples[static_cast<std::size_t>(i)];
    if (s.height() != m.height || s.width() != m.width)
      throw std::invalid_argument("all samples in a dataset must share one resolution");
    if (auto err = check_scene(s)) throw std::invalid_argument(sample_id(i) + ": " + *err);
    m.samples.push_back(sample_id(i));
    m.sample_seeds.push_back(s.meta.seed);
    m.texture_ids.push_back(s.meta.texture_id);
    write_sample(s, root / m.samples.back());
  }
  json j = {{"version", m.version}, {"count", m.count},   {"height", m.height},
            {"width", m.width},     {"samples", m.samples}, {"seed", m.seed},
            {"sample_seeds", m.sample_seeds}, {"texture_ids", m.texture_ids}};
  write_text(root / "manifest.json", j.dump(2));
  return m;
}

DatasetManifest read_manifest(const fs::path& root) {
  json j = read_json(root / "manifest.json");
  DatasetManifest m;
  try {
    m.version = j.at("version");
    if (m.version != 1) throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
    m.count = j.at("count");
    m.height = j.at("height");
    m.width = j.at("width");
    m.samples = j.at("samples").get<std::vector<std::string>>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.sample_seeds = j.value("sample_seeds", std::vector<std::uint64_t>{});
    m.texture_ids = j.value("texture_ids", std::vector<int>{});
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("manifest.json: ") + e.what());
  }
  if (static_cast<int>(m.samples.size()) != m.count)
    throw std::runtime_error("manifest count disagrees with its sample list");
  return m;
}

DatasetReadResult read_dataset(const fs::path& root) {
  DatasetReadResult r;
  r.manifest = read_manifest(root);
  for (const std::string& id : r.manifest.samples) {
    try {
      SceneSample s = read_sample(root / id);
      if (s.height() != r.manifest.height || s.width() != r.manifest.width)
        throw std::runtime_error("resolution differs from manifest");
      r.ids.push_back(id);
      r.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      r.errors.push_back({id, e.what()});
    }
  }
  return r;
}

}  // namespace handfit
