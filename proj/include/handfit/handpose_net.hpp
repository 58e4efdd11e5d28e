#pragma once

#include <string>
#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/config.hpp"
#include "handfit/nn.hpp"

namespace handfit {

/// Pose rasters at image resolution.
struct PoseMaps {
  Tensor dwpose;      // [H, W, 3] skeleton lines
  Tensor densepose;   // [H, W, 4] one-hot background / torso / arms / hands
  Tensor hand_depth;  // [H, W, 1] in [0, 1]
};

inline constexpr int kZeroMultilayerConvs = 7;
inline constexpr int kControlSites = 3;

/// Control injection sites of the denoiser.
enum class ControlSite : int { Encoder = 0, Bottleneck = 1, Decoder = 2 };

/// Shape of the residual expected at `site` for a latent of extent `latent`.
Shape control_shape(ControlSite site, int latent, int d_model);

/// Seven conv+SiLU layers (strides 2, 2, 2, 1, 1, 1, 1) then a zero 1x1 conv.
void init_zero_multilayer(ParameterStore& s, const std::string& prefix, int in_channels, int d_model, std::uint64_t seed);
ag::Var zero_multilayer_forward(Binder& b, const std::string& prefix, const ag::Var& map);

/// F_dw + F_dp + w_hand * F_rh. Null branches are treated as absent.
Tensor aggregate(const Tensor& f_dw, const Tensor& f_dp, const Tensor& f_rh, double w_hand);
ag::Var aggregate(const ag::Var& f_dw, const ag::Var& f_dp, const ag::Var& f_rh, double w_hand);

void init_handpose_net(ParameterStore& s, const ModelConfig& cfg);

struct HandPoseOutput {
  std::vector<ag::Var> residuals;  // indexed by ControlSite
  ag::Var features;                // after aggregation, conditioning and attention, [L, L, d]
};

/// Runs the enabled branches, aggregates them, adds timestep and noisy
/// latent conditioning, injects c_struc through gated cross-attention and
/// projects to per-site residuals through zero-initialised 1x1 convs.
/// `gate` is the hand gate at latent resolution; c_struc may be null when
/// the structural pathway is disabled.
HandPoseOutput handpose_forward(Binder& b, const ModelConfig& cfg, const PoseMaps& maps, const ag::Var& c_struc,
                                const Tensor& gate, int t, const ag::Var& z_in, double w_hand);

}  // namespace handfit
