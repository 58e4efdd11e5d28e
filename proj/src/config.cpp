#include "handfit/config.hpp"

#include <stdexcept>

namespace handfit {

using nlohmann::json;

void EdgeConfig::validate() const {
  if (!(gaussian_sigma > 0.0)) throw std::invalid_argument("edge.gaussian_sigma must be positive");
  if (!(canny_low >= 0.0 && canny_low <= canny_high && canny_high <= 1.0))
    throw std::invalid_argument("edge thresholds need 0 <= canny_low <= canny_high <= 1");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (d_model < 4) fail("d_model must be at least 4");
  if (heads < 1 || d_model % heads) fail("heads must divide d_model");
  if (image_size < 32 || image_size % 32) fail("image_size must be a positive multiple of 32 (latent /8, two U-Net downsamples)");
  if (bps_k < 1) fail("bps_k must be positive");
  if (T < 1) fail("T must be positive");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) fail("need 0 < beta_start <= beta_end < 1");
  if (R_t < 0 || R_t >= T) fail("R_t must lie in [0, T)");
  if (lambda_hand < 0.0) fail("lambda_hand must be non-negative");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (batch_size < 1) fail("batch_size must be positive");
  if (steps_phase1 < 0 || steps_phase2 < 0) fail("step counts must be non-negative");
  if (use_hpa && !(hpa_dwpose || hpa_densepose || hpa_depth)) fail("use_hpa needs at least one branch enabled");
  if (use_struct && !use_hpa) fail("use_struct requires use_hpa");
  edge.validate();
}

json to_json(const EdgeConfig& c) {
  return json{{"gaussian_sigma", c.gaussian_sigma},
              {"canny_low", c.canny_low},
              {"canny_high", c.canny_high},
              {"mode", c.mode == EdgeMode::CannyHard ? "canny-hard" : "sobel-soft"}};
}

json to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"image_size", c.image_size},
              {"heads", c.heads},
              {"bps_k", c.bps_k},
              {"T", c.T},
              {"beta_start", c.beta_start},
              {"beta_end", c.beta_end},
              {"R_t", c.R_t},
              {"lambda_hand", c.lambda_hand},
              {"w_hand", c.w_hand},
              {"seed", c.seed},
              {"use_hpa", c.use_hpa},
              {"hpa_dwpose", c.hpa_dwpose},
              {"hpa_densepose", c.hpa_densepose},
              {"hpa_depth", c.hpa_depth},
              {"use_struct", c.use_struct},
              {"use_appear", c.use_appear},
              {"use_canny_loss", c.use_canny_loss},
              {"lr", c.lr},
              {"betas", {c.beta1, c.beta2}},
              {"weight_decay", c.weight_decay},
              {"adam_eps", c.adam_eps},
              {"grad_clip", c.grad_clip},
              {"batch_size", c.batch_size},
              {"steps_phase1", c.steps_phase1},
              {"steps_phase2", c.steps_phase2},
              {"edge", to_json(c.edge)}};
}

EdgeConfig edge_config_from_json(const json& j, EdgeConfig c) {
  if (!j.is_object()) throw std::invalid_argument("edge config must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "gaussian_sigma") c.gaussian_sigma = v.get<double>();
    else if (k == "canny_low") c.canny_low = v.get<double>();
    else if (k == "canny_high") c.canny_high = v.get<double>();
    else if (k == "mode") {
      const auto m = v.get<std::string>();
      if (m == "canny-hard") c.mode = EdgeMode::CannyHard;
      else if (m == "sobel-soft") c.mode = EdgeMode::SobelSoft;
      else throw std::invalid_argument("edge.mode must be canny-hard or sobel-soft, got " + m);
    } else {
      throw std::invalid_argument("unknown edge config key: " + k);
    }
  }
  return c;
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  bool rt_given = false;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "d_model") c.d_model = v.get<int>();
      else if (k == "image_size") c.image_size = v.get<int>();
      else if (k == "heads") c.heads = v.get<int>();
      else if (k == "bps_k") c.bps_k = v.get<int>();
      else if (k == "T") c.T = v.get<int>();
      else if (k == "beta_start") c.beta_start = v.get<double>();
      else if (k == "beta_end") c.beta_end = v.get<double>();
      else if (k == "R_t") { c.R_t = v.get<int>(); rt_given = true; }
      else if (k == "lambda_hand") c.lambda_hand = v.get<double>();
      else if (k == "w_hand") c.w_hand = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "use_hpa") c.use_hpa = v.get<bool>();
      else if (k == "hpa_dwpose") c.hpa_dwpose = v.get<bool>();
      else if (k == "hpa_densepose") c.hpa_densepose = v.get<bool>();
      else if (k == "hpa_depth") c.hpa_depth = v.get<bool>();
      else if (k == "use_struct") c.use_struct = v.get<bool>();
      else if (k == "use_appear") c.use_appear = v.get<bool>();
      else if (k == "use_canny_loss") c.use_canny_loss = v.get<bool>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "betas") {
        if (!v.is_array() || v.size() != 2) throw std::invalid_argument("betas must be a two-element array");
        c.beta1 = v[0].get<double>();
        c.beta2 = v[1].get<double>();
      } else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "adam_eps") c.adam_eps = v.get<double>();
      else if (k == "grad_clip") c.grad_clip = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "steps_phase1") c.steps_phase1 = v.get<int>();
      else if (k == "steps_phase2") c.steps_phase2 = v.get<int>();
      else if (k == "edge") c.edge = edge_config_from_json(v, c.edge);
      else throw std::invalid_argument("unknown config key: " + k);
    } catch (const json::exception& e) {
      throw std::invalid_argument("config key " + k + ": " + e.what());
    }
  }
  if (!rt_given && j.contains("T")) c.R_t = c.T / 5;
  return c;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"baseline", "hpa_densepose", "hpa", "hpa_struct", "hpa_struct_appear", "full"};
  return names;
}

ModelConfig variant_config(const std::string& name, ModelConfig c) {
  c.use_hpa = c.hpa_dwpose = c.hpa_densepose = c.hpa_depth = false;
  c.use_struct = c.use_appear = c.use_canny_loss = false;
  const auto& names = variant_names();
  std::size_t level = 0;
  while (level < names.size() && names[level] != name) ++level;
  if (level == names.size()) throw std::invalid_argument("unknown variant: " + name);
  if (level >= 1) c.use_hpa = c.hpa_densepose = true;
  if (level >= 2) c.hpa_dwpose = c.hpa_depth = true;
  if (level >= 3) c.use_struct = true;
  if (level >= 4) c.use_appear = true;
  if (level >= 5) c.use_canny_loss = true;
  return c;
}

}  // namespace handfit
