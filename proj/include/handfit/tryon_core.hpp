#pragma once

#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/config.hpp"
#include "handfit/encoders.hpp"
#include "handfit/nn.hpp"

namespace handfit {

/// Scaled dot-product attention whose output rows are multiplied by a binary
/// per-query gate: rows with gate 0 come out exactly zero.
Tensor masked_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& gate);
ag::Var masked_cross_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v, const Tensor& gate, int heads = 1);

void init_denoiser(ParameterStore& s, const ModelConfig& cfg);

/// Intermediate activations exposed for locality tests.
struct DenoiserTrace {
  Tensor bottleneck_pre_attention;  // [L/4, L/4, 4d]
  Tensor bottleneck;                // after garment and appearance attention
};

/// Predicts the noise in z_t. Input is concat(z_t, agnostic latent); the
/// garment latent is added after the input projection, garment tokens attend
/// ungated at the bottleneck, c_appear attends gated by the hand gate
/// (downsampled to the bottleneck), and control residuals are added at
/// their sites. `controls` is empty or has one entry per ControlSite.
ag::Var denoise_step(Binder& b, const ModelConfig& cfg, const ag::Var& z_t, const Tensor& agnostic_latent, int t,
                     const GarmentEncoding& garment, const std::vector<ag::Var>& controls, const ag::Var& c_appear,
                     const Tensor& gate, DenoiserTrace* trace = nullptr);

}  // namespace handfit
