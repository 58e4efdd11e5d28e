#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace handfit {

enum class EdgeMode { CannyHard, SobelSoft };

struct EdgeConfig {
  double gaussian_sigma = 1.0;
  double canny_low = 0.1;   // fraction of max gradient magnitude
  double canny_high = 0.2;
  EdgeMode mode = EdgeMode::SobelSoft;

  void validate() const;
};

/// Architecture, training hyperparameters and ablation flags.
struct ModelConfig {
  int d_model = 64;
  int image_size = 64;
  int heads = 4;
  int bps_k = 128;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int R_t = 200;
  double lambda_hand = 0.5;
  double w_hand = 1.0;
  std::uint64_t seed = 0;

  bool use_hpa = true;
  bool hpa_dwpose = true;
  bool hpa_densepose = true;
  bool hpa_depth = true;
  bool use_struct = true;
  bool use_appear = true;
  bool use_canny_loss = true;

  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  int batch_size = 8;
  int steps_phase1 = 2000;
  int steps_phase2 = 2000;

  EdgeConfig edge;

  int latent_size() const { return image_size / 8; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const EdgeConfig& c);
nlohmann::json to_json(const ModelConfig& c);
/// Overlays keys of `j` onto `base`; unknown keys are rejected.
EdgeConfig edge_config_from_json(const nlohmann::json& j, EdgeConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Ablation variants in cumulative order.
const std::vector<std::string>& variant_names();
ModelConfig variant_config(const std::string& name, ModelConfig base);

}  // namespace handfit
