#pragma once

#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/config.hpp"
#include "handfit/handprior.hpp"
#include "handfit/schedule.hpp"

namespace handfit {

/// Mean squared error between true and predicted noise.
ag::Var noise_loss(const ag::Var& eps, const ag::Var& eps_hat);
double noise_loss(const Tensor& eps, const Tensor& eps_hat);

/// Normalised Gaussian kernel of radius ceil(3 sigma).
Tensor gaussian_kernel(double sigma);
Tensor sobel_x_kernel();
Tensor sobel_y_kernel();

/// Classical Canny: Gaussian blur, Sobel, 4-bin non-maximum suppression,
/// double threshold (fractions of the max magnitude) with 8-connected
/// hysteresis. Borders are clamped. Returns a binary [H, W] map.
Tensor canny(const Tensor& gray, const EdgeConfig& cfg);

/// Blur, Sobel magnitude, divide by (max + 1e-8). Differentiable.
ag::Var edge_surrogate(const ag::Var& gray, const EdgeConfig& cfg);
Tensor edge_surrogate(const Tensor& gray, const EdgeConfig& cfg);

/// Edge loss on the one-step clean prediction of one image.
struct HandCannyTerm {
  ag::Var sum;    // sum over crops of per-crop mean squared edge difference
  int crops = 0;  // number of non-filler crops contributing
};

/// Returns a zero term with no gradient path when t > R_t. Otherwise
/// recovers z0 from (z_t, eps_hat), decodes it, crops every box and compares
/// edge maps with those of the ground-truth image.
HandCannyTerm hand_canny_term(const Tensor& z_t, const ag::Var& eps_hat, int t, int R_t, const NoiseSchedule& sched,
                              const std::vector<Box>& boxes, const Tensor& gt_image, const EdgeConfig& cfg);

/// Mean over crops (0 if there are none).
ag::Var hand_canny_loss(const Tensor& z_t, const ag::Var& eps_hat, int t, int R_t, const NoiseSchedule& sched,
                        const std::vector<Box>& boxes, const Tensor& gt_image, const EdgeConfig& cfg);

/// Non-filler boxes of a hand record.
std::vector<Box> hand_boxes(const HandParams& params);

ag::Var total_loss(const ag::Var& noise, const ag::Var& hand, double lambda_hand);

}  // namespace handfit
