#pragma once

#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/tensor.hpp"

namespace handfit {

/// Linear-beta diffusion schedule. Timesteps are 0-indexed: index t
/// corresponds to step t+1 of a 1-indexed formulation.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  double alpha_bar(int t) const;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

/// sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps
Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& sched);

/// (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
Tensor predict_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);
ag::Var predict_z0(const ag::Var& z_t, const ag::Var& eps_hat, int t, const NoiseSchedule& sched);

}  // namespace handfit
