#include "handfit/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace handfit {

namespace {
void check_t(int t, const NoiseSchedule& s) {
  if (t < 0 || t >= s.T)
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + ")");
}
}  // namespace

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t, *this);
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule: T must be positive, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<std::size_t>(T));
  s.alpha_bars.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    s.betas[t] = b;
    prod *= (1.0 - b);
    s.alpha_bars[t] = prod;
  }
  return s;
}

Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "add_noise");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Tensor predict_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
  require_same_shape(z_t, eps_hat, "predict_z0");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) / a;
  return out;
}

ag::Var predict_z0(const ag::Var& z_t, const ag::Var& eps_hat, int t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  return ag::scale(ag::sub(z_t, ag::scale(eps_hat, b)), 1.0 / a);
}

}  // namespace handfit
