#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "handfit/tensor.hpp"

namespace handfit {

inline constexpr int kHandSlots = 2;
inline constexpr int kHandVertices = 778;
inline constexpr int kHandJoints = 21;
inline constexpr int kRotJoints = 16;

enum class HandType : int { Filler = -1, Left = 0, Right = 1 };

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return empty() ? 0 : static_cast<long>(width()) * height(); }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const Box&) const = default;
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

struct SingleHand {
  HandType type = HandType::Filler;
  std::vector<Vec3> vertices;                         // kHandVertices, model units
  std::array<std::array<double, 2>, kHandJoints> joints{};  // (x, y) pixels
  std::array<Mat3, kRotJoints> rotations{};
  Tensor mask;  // [H, W] in {0, 1}
  Box box;

  bool is_filler() const { return type == HandType::Filler; }
  static SingleHand filler(int height, int width);
};

/// Fixed two-slot hand record; trailing slots are fillers.
struct HandParams {
  int height = 0;
  int width = 0;
  std::array<SingleHand, kHandSlots> hands;

  int count() const;
};

/// Returns a description of the first violated invariant, if any.
std::optional<std::string> check_hand_params(const HandParams& p);
std::optional<std::string> check_single_hand(const SingleHand& h, int height, int width);

/// Keeps the two largest boxes (ties: smaller x0), ordered by descending
/// area, and pads with fillers.
HandParams pad_hands(std::vector<SingleHand> detected, int height, int width);

struct BasisPointSet {
  std::vector<Vec3> points;
  std::uint64_t seed = 0;

  static BasisPointSet make(int k = 128, std::uint64_t seed = 17);
  int size() const { return static_cast<int>(points.size()); }
};

/// Centroid-subtract then divide by max norm. All-zero clouds stay zero.
std::vector<Vec3> normalize_cloud(const std::vector<Vec3>& vertices);

/// Entry k is the distance from basis point k to its nearest vertex.
std::vector<double> bps_encode(const std::vector<Vec3>& vertices, const BasisPointSet& basis);

/// Normalizes and encodes a hand; fillers encode to zeros.
std::vector<double> bps_encode_hand(const SingleHand& hand, const BasisPointSet& basis);

bool is_rotation(const Mat3& r, double tol = 1e-5);
std::array<double, 6> rot_to_6d(const Mat3& r);
Mat3 rot_from_6d(const std::array<double, 6>& v);
Mat3 rot_z(double angle);
Mat3 rot_x(double angle);
Mat3 matmul3(const Mat3& a, const Mat3& b);

/// Pixelwise OR of all slot masks, [H, W].
Tensor union_mask(const HandParams& params);

/// Max-pool reduction of a binary [H, W] mask by `factor`.
Tensor downsample_gate(const Tensor& mask, int factor);

/// Half-open sub-rectangle of an [H, W] or [H, W, C] tensor.
Tensor crop_box(const Tensor& image, const Box& box);

}  // namespace handfit
