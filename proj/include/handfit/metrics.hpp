#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "handfit/handprior.hpp"
#include "handfit/synthdata.hpp"

namespace handfit {

using Joints2d = std::array<std::array<double, 2>, kHandJoints>;

/// Mean local SSIM over valid Gaussian windows (sigma 1.5), averaged over
/// channels. Inputs are [H, W] or [H, W, C] in [0, 1].
double ssim(const Tensor& a, const Tensor& b, int window = 11);

inline constexpr double kJointMissThreshold = 0.5;

/// Locates the magenta fiducial of each joint within `radius` of its ground
/// truth position. Missed joints are reported at gt + (radius, 0).
Joints2d detect_joints(const Tensor& image, const Joints2d& gt, int radius = 6);

double mpjpe_2d(const std::vector<std::array<double, 2>>& pred, const std::vector<std::array<double, 2>>& gt);
double mpjpe_2d(const Joints2d& pred, const Joints2d& gt);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Rows are samples.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features);
double fid(const GaussianStats& a, const GaussianStats& b);
/// Unbiased MMD^2 with kernel (x.y / D + 1)^3.
double kid(const Eigen::MatrixXd& f1, const Eigen::MatrixXd& f2);

inline constexpr int kFeatureDim = 64;
inline constexpr int kCropSize = 32;

using FeatureExtractor = std::function<std::vector<double>(const Tensor& image)>;

/// 4x4 grid channel means followed by a 16-bin gradient orientation
/// histogram, computed on a 32x32 RGB image.
std::vector<double> default_features(const Tensor& image);

/// Features of every non-filler hand crop, resized to 32x32.
Eigen::MatrixXd region_stats(const std::vector<Tensor>& images, const std::vector<HandParams>& hands,
                             const FeatureExtractor& extractor = default_features);
/// Features of whole images resized to 32x32.
Eigen::MatrixXd image_stats(const std::vector<Tensor>& images, const FeatureExtractor& extractor = default_features);

enum class EvalMode { Paired, Unpaired };

EvalMode eval_mode_from_string(const std::string& s);
std::string to_string(EvalMode m);

struct EvalReport {
  EvalMode mode = EvalMode::Paired;
  int samples = 0;
  int hand_crops = 0;
  std::map<std::string, double> metrics;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string table() const;
};

/// Metric keys computed in each mode.
std::vector<std::string> metric_keys(EvalMode mode);

/// Scores generated images against the reference samples (aligned by
/// index). `requested` restricts the metric set; asking for SSIM in
/// unpaired mode is an error.
EvalReport evaluate(const std::vector<Tensor>& generated, const std::vector<SceneSample>& reference, EvalMode mode,
                    const std::vector<std::string>& requested = {});

}  // namespace handfit
