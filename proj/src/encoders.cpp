#include "handfit/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "handfit/image.hpp"

namespace handfit {

namespace {

// latent index -> image index for the space-to-depth map
std::shared_ptr<const std::vector<std::size_t>> decode_index(int lh, int lw) {
  const int h = lh * 8, w = lw * 8;
  auto idx = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const int ch = ((y % 8) * 8 + (x % 8)) * 3 + c;
        (*idx)[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            (static_cast<std::size_t>(y / 8) * lw + x / 8) * kLatentChannels + ch;
      }
  return idx;
}

void check_latent(const Tensor& z) {
  if (z.rank() != 3 || z.dim(2) != kLatentChannels) throw ShapeError("latent must be [h, w, 192], got " + shape_str(z.shape()));
}

Tensor sobel_magnitude(const Tensor& g) {
  const int h = g.dim(0), w = g.dim(1);
  Tensor m({h, w});
  auto px = [&](int y, int x) { return g.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) - (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) - (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      m.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return m;
}

ag::Var relu_stack(Binder& b, const std::string& prefix, ag::Var x) {
  for (int i = 0; i < 3; ++i) x = ag::relu(nn::linear(b, prefix + ".l" + std::to_string(i), x));
  return x;
}

ag::Var norm_stack(Binder& b, const std::string& prefix, ag::Var x) {
  for (int i = 0; i < 2; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i);
    x = nn::layer_norm(b, prefix + ".ln" + std::to_string(i), nn::linear(b, p, x));
  }
  return x;
}

}  // namespace

Tensor encode_latent(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("encode_latent: expected [H, W, 3], got " + shape_str(image.shape()));
  if (image.dim(0) % 8 || image.dim(1) % 8)
    throw ShapeError("encode_latent: image dims " + shape_str(image.shape()) + " not divisible by 8");
  const int lh = image.dim(0) / 8, lw = image.dim(1) / 8;
  const auto idx = decode_index(lh, lw);
  Tensor z({lh, lw, kLatentChannels});
  for (std::size_t i = 0; i < idx->size(); ++i) z[(*idx)[i]] = 2.0 * image[i] - 1.0;
  return z;
}

Tensor decode_latent(const Tensor& latent) {
  check_latent(latent);
  const int lh = latent.dim(0), lw = latent.dim(1);
  const auto idx = decode_index(lh, lw);
  Tensor img({lh * 8, lw * 8, 3});
  for (std::size_t i = 0; i < idx->size(); ++i) img[i] = (latent[(*idx)[i]] + 1.0) / 2.0;
  return img;
}

ag::Var decode_latent(const ag::Var& latent) {
  check_latent(latent->val());
  const int lh = latent->shape()[0], lw = latent->shape()[1];
  return ag::affine(ag::gather(latent, decode_index(lh, lw), {lh * 8, lw * 8, 3}), 0.5, 0.5);
}

StructFeatures struct_features(const HandParams& params, const BasisPointSet& basis) {
  const int k = basis.size();
  StructFeatures f{Tensor({kHandSlots, k}), Tensor({kHandSlots, kHandJoints * 2}), Tensor({kHandSlots, 2}),
                   Tensor({kHandSlots, kRotJoints * 6})};
  for (int s = 0; s < kHandSlots; ++s) {
    const SingleHand& h = params.hands[s];
    const auto bps = bps_encode_hand(h, basis);
    for (int i = 0; i < k; ++i) f.vertices.at(s, i) = bps[i];
    f.types.at(s, 0) = static_cast<double>(static_cast<int>(h.type));
    f.types.at(s, 1) = h.is_filler() ? -1.0 : 1.0;
    if (h.is_filler()) continue;
    for (int j = 0; j < kHandJoints; ++j) {
      f.joints.at(s, 2 * j) = h.joints[j][0] / params.width;
      f.joints.at(s, 2 * j + 1) = h.joints[j][1] / params.height;
    }
    for (int r = 0; r < kRotJoints; ++r) {
      const auto v = rot_to_6d(h.rotations[r]);
      for (int i = 0; i < 6; ++i) f.rotations.at(s, r * 6 + i) = v[i];
    }
  }
  return f;
}

void init_struct_encoder(ParameterStore& s, int d, int bps_k, std::uint64_t seed) {
  const std::pair<const char*, int> relu_groups[] = {{"struct.verts", bps_k}, {"struct.joints", kHandJoints * 2}};
  for (const auto& [name, in] : relu_groups) {
    nn::init_linear(s, std::string(name) + ".l0", in, d, seed);
    nn::init_linear(s, std::string(name) + ".l1", d, d, seed);
    nn::init_linear(s, std::string(name) + ".l2", d, d, seed);
  }
  const std::pair<const char*, int> norm_groups[] = {{"struct.type", 2}, {"struct.rot", kRotJoints * 6}};
  for (const auto& [name, in] : norm_groups) {
    nn::init_linear(s, std::string(name) + ".l0", in, d, seed);
    nn::init_layer_norm(s, std::string(name) + ".ln0", d);
    nn::init_linear(s, std::string(name) + ".l1", d, d, seed);
    nn::init_layer_norm(s, std::string(name) + ".ln1", d);
  }
}

ag::Var hand_struct_embed(Binder& b, const StructFeatures& f) {
  // group-major [4 * 2, d] (row = group * 2 + slot) -> slot-major [8, d]
  const ag::Var grouped = ag::concat_rows({
      relu_stack(b, "struct.verts", ag::constant(f.vertices)),
      relu_stack(b, "struct.joints", ag::constant(f.joints)),
      norm_stack(b, "struct.type", ag::constant(f.types)),
      norm_stack(b, "struct.rot", ag::constant(f.rotations)),
  });
  const int d = grouped->shape()[1];
  auto idx = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(kHandSlots) * kStructTokensPerHand * d);
  for (int s = 0; s < kHandSlots; ++s)
    for (int g = 0; g < kStructTokensPerHand; ++g)
      for (int c = 0; c < d; ++c)
        (*idx)[(static_cast<std::size_t>(s) * kStructTokensPerHand + g) * d + c] = (static_cast<std::size_t>(g) * kHandSlots + s) * d + c;
  return ag::gather(grouped, idx, {kHandSlots * kStructTokensPerHand, d});
}

Tensor hand_struct_embed(const HandParams& params, const BasisPointSet& basis, const ParameterStore& enc) {
  Binder b(enc);
  return hand_struct_embed(b, struct_features(params, basis))->val();
}

void init_appear_encoder(ParameterStore& s, int d, std::uint64_t seed) {
  nn::init_linear(s, "appear.ha.l", kAppearanceDim, d, seed);
  nn::init_layer_norm(s, "appear.ha.ln", d);
}

ag::Var hand_appear_embed(Binder& b, const ag::Var& feats) {
  if (feats->shape() != Shape{kHandSlots, kAppearanceDim})
    throw ShapeError("hand_appear_embed: expected [2, 1536], got " + shape_str(feats->shape()));
  return nn::layer_norm(b, "appear.ha.ln", nn::linear(b, "appear.ha.l", feats));
}

Tensor hand_appear_embed(const Tensor& feats, const ParameterStore& enc) {
  Binder b(enc);
  return hand_appear_embed(b, ag::constant(feats))->val();
}

std::vector<double> appearance_features_stub(const Tensor& patch) {
  std::vector<double> f(kAppearanceDim, 0.0);
  if (patch.size() == 0) return f;
  if (patch.rank() != 3 || patch.dim(2) != 3) throw ShapeError("appearance_features_stub: expected [h, w, 3] patch");
  const Tensor small = resize_bilinear(patch, 16, 16);
  std::copy(small.data(), small.data() + 768, f.begin());
  const Tensor mag = sobel_magnitude(to_gray(small));
  std::copy(mag.data(), mag.data() + 256, f.begin() + 768);
  const Tensor gray = to_gray(patch);
  const double inv = 1.0 / static_cast<double>(gray.size());
  for (double g : gray.values()) {
    const int bin = std::clamp(static_cast<int>(std::floor(g * 256.0)), 0, 255);
    f[1024 + bin] += inv;
  }
  return f;
}

Tensor appearance_features(const Tensor& image, const HandParams& params) {
  Tensor out({kHandSlots, kAppearanceDim}, 0.0);
  for (int s = 0; s < kHandSlots; ++s) {
    const SingleHand& h = params.hands[s];
    if (h.is_filler()) continue;
    const auto f = appearance_features_stub(crop_box(image, h.box));
    std::copy(f.begin(), f.end(), out.data() + static_cast<std::size_t>(s) * kAppearanceDim);
  }
  return out;
}

void init_garment_encoder(ParameterStore& s, int d, std::uint64_t seed) {
  nn::init_linear(s, "garment.proj", kLatentChannels, d, seed);
  nn::init_tensor_uniform(s, "garment.pos", {kGarmentTokens, d}, 0.1, seed);
}

Tensor garment_patch_stats(const Tensor& latent) {
  check_latent(latent);
  const int lh = latent.dim(0), lw = latent.dim(1);
  if (lh % 4 || lw % 4) throw ShapeError("garment_patch_stats: latent extent not divisible by 4");
  const int ch = lh / 4, cw = lw / 4;
  Tensor st({kGarmentTokens, kLatentChannels}, 0.0);
  const double inv = 1.0 / (ch * cw);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      const int cell = (y / ch) * 4 + x / cw;
      for (int c = 0; c < kLatentChannels; ++c) st.at(cell, c) += inv * latent.at(y, x, c);
    }
  return st;
}

GarmentEncoding garment_encode(Binder& b, const Tensor& garment) {
  GarmentEncoding g;
  g.latent = encode_latent(garment);
  g.tokens = ag::add(nn::linear(b, "garment.proj", ag::constant(garment_patch_stats(g.latent))), b("garment.pos"));
  return g;
}

}  // namespace handfit
