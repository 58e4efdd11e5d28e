#pragma once

#include <cstdint>
#include <vector>

#include "handfit/config.hpp"
#include "handfit/encoders.hpp"
#include "handfit/handpose_net.hpp"
#include "handfit/nn.hpp"
#include "handfit/schedule.hpp"
#include "handfit/synthdata.hpp"

namespace handfit {

/// Everything a forward pass needs from one SceneSample, computed once.
struct PreparedSample {
  Tensor z0;               // latent of the person image
  Tensor agnostic_latent;
  Tensor agnostic_image;
  Tensor agnostic_mask;
  Tensor garment;
  Tensor person;
  PoseMaps pose;
  Tensor gate;             // union hand mask at latent resolution
  StructFeatures structure;
  Tensor appear_feats;     // [2, 1536], taken from the agnostic image
  std::vector<Box> boxes;  // non-filler hand boxes
};

/// Parameters of the enabled pathways plus the fixed schedule and basis.
class HandFitModel {
 public:
  explicit HandFitModel(const ModelConfig& cfg);
  /// Adopts existing parameters; keys must match the variant exactly.
  HandFitModel(const ModelConfig& cfg, ParameterStore params);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const BasisPointSet& basis() const { return basis_; }

  PreparedSample prepare(const SceneSample& s) const;

  /// Noise estimate for z_t; w_hand overrides the configured weight.
  ag::Var predict_eps(Binder& b, const PreparedSample& s, const Tensor& z_t, int t, double w_hand) const;
  ag::Var predict_eps(Binder& b, const PreparedSample& s, const Tensor& z_t, int t) const;
  Tensor predict_eps(const PreparedSample& s, const Tensor& z_t, int t) const;

  struct Output {
    Tensor raw;        // decoded sample, clamped to [0, 1]
    Tensor composite;  // raw inside the agnostic mask, agnostic image outside
  };
  /// Iterative denoising from seeded Gaussian noise over `steps` evenly
  /// spaced timesteps.
  Output infer(const PreparedSample& s, int steps, std::uint64_t seed) const;
  Output infer(const PreparedSample& s, int steps, std::uint64_t seed, double w_hand) const;

 private:
  ModelConfig cfg_;
  ParameterStore params_;
  NoiseSchedule sched_;
  BasisPointSet basis_;
};

/// Parameter store holding exactly the enabled pathways of `cfg`.
ParameterStore build_variant(const ModelConfig& cfg);

/// Descending timesteps used by infer.
std::vector<int> inference_timesteps(int T, int steps);

}  // namespace handfit
