#pragma once

#include <cstdint>
#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/handprior.hpp"
#include "handfit/nn.hpp"

namespace handfit {

inline constexpr int kLatentChannels = 192;  // 8 x 8 x 3 per latent cell
inline constexpr int kAppearanceDim = 1536;
inline constexpr int kStructTokensPerHand = 4;
inline constexpr int kGarmentTokens = 16;

// ---- toy latent codec (lossless space-to-depth) ----

/// [H, W, 3] in [0, 1] -> [H/8, W/8, 192] via x -> 2x - 1.
Tensor encode_latent(const Tensor& image);
Tensor decode_latent(const Tensor& latent);
ag::Var decode_latent(const ag::Var& latent);

// ---- Hand-Struct processor ----

/// Raw per-slot inputs to the structural processor, each [2, width].
struct StructFeatures {
  Tensor vertices;   // BPS distances, K
  Tensor joints;     // 21 x 2 flattened, scaled by image extent
  Tensor types;      // (type, presence) with -1 for fillers
  Tensor rotations;  // 16 x 6D
};

StructFeatures struct_features(const HandParams& params, const BasisPointSet& basis);

void init_struct_encoder(ParameterStore& s, int d_model, int bps_k, std::uint64_t seed);

/// c_struc, [8, d_model]: per slot the tokens (vertices, joints, type,
/// rotations), slot 0 first.
ag::Var hand_struct_embed(Binder& b, const StructFeatures& f);
Tensor hand_struct_embed(const HandParams& params, const BasisPointSet& basis, const ParameterStore& enc);

// ---- Hand-Appear processor ----

void init_appear_encoder(ParameterStore& s, int d_model, std::uint64_t seed);

/// c_appear, [2, d_model] = LayerNorm(Linear(feats)).
ag::Var hand_appear_embed(Binder& b, const ag::Var& feats);
Tensor hand_appear_embed(const Tensor& feats, const ParameterStore& enc);

/// Deterministic 1536-d descriptor of an image patch: resized pixels (768),
/// Sobel magnitude at 16x16 (256), grayscale histogram (256), zero pad (256).
/// An empty patch yields the zero vector.
std::vector<double> appearance_features_stub(const Tensor& patch);

/// [2, 1536] features of each slot's box in `image`; fillers are zero.
Tensor appearance_features(const Tensor& image, const HandParams& params);

// ---- GarmentNet ----

void init_garment_encoder(ParameterStore& s, int d_model, std::uint64_t seed);

struct GarmentEncoding {
  Tensor latent;     // encode_latent(garment)
  ag::Var tokens;    // [16, d_model]
};

/// 4x4 grid of per-cell channel means of a latent, [16, 192].
Tensor garment_patch_stats(const Tensor& latent);
GarmentEncoding garment_encode(Binder& b, const Tensor& garment);

}  // namespace handfit
