#include "handfit/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "handfit/losses.hpp"
#include "handfit/tryon_core.hpp"

namespace handfit {

ParameterStore build_variant(const ModelConfig& cfg) {
  cfg.validate();
  ParameterStore s;
  init_denoiser(s, cfg);
  init_garment_encoder(s, cfg.d_model, cfg.seed);
  if (cfg.use_hpa) init_handpose_net(s, cfg);
  if (cfg.use_struct) init_struct_encoder(s, cfg.d_model, cfg.bps_k, cfg.seed);
  if (cfg.use_appear) init_appear_encoder(s, cfg.d_model, cfg.seed);
  return s;
}

HandFitModel::HandFitModel(const ModelConfig& cfg) : HandFitModel(cfg, build_variant(cfg)) {}

HandFitModel::HandFitModel(const ModelConfig& cfg, ParameterStore params)
    : cfg_(cfg),
      params_(std::move(params)),
      sched_(make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)),
      basis_(BasisPointSet::make(cfg.bps_k)) {
  cfg_.validate();
  ParameterStore ref = build_variant(cfg_);
  for (const auto& [k, t] : ref.items()) {
    if (!params_.contains(k)) throw std::invalid_argument("missing parameter " + k);
    if (params_.get(k).shape() != t.shape())
      throw ShapeError("parameter " + k + " has shape " + shape_str(params_.get(k).shape()) + ", expected " +
                       shape_str(t.shape()));
  }
  for (const std::string& k : params_.keys())
    if (!ref.contains(k)) throw std::invalid_argument("unexpected parameter " + k);
}

PreparedSample HandFitModel::prepare(const SceneSample& s) const {
  if (s.height() != cfg_.image_size || s.width() != cfg_.image_size)
    throw ShapeError("sample is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                     " but the model expects " + std::to_string(cfg_.image_size));
  PreparedSample p;
  p.z0 = encode_latent(s.person);
  p.agnostic_latent = encode_latent(s.agnostic);
  p.agnostic_image = s.agnostic;
  p.agnostic_mask = s.agnostic_mask;
  p.garment = s.garment;
  p.person = s.person;
  p.pose = s.pose;
  p.gate = downsample_gate(union_mask(s.hands), 8);
  p.structure = struct_features(s.hands, basis_);
  p.appear_feats = appearance_features(s.agnostic, s.hands);
  p.boxes = hand_boxes(s.hands);
  return p;
}

ag::Var HandFitModel::predict_eps(Binder& b, const PreparedSample& s, const Tensor& z_t, int t, double w_hand) const {
  const ag::Var z = ag::constant(z_t);
  ag::Var c_struc, c_appear;
  if (cfg_.use_struct) c_struc = hand_struct_embed(b, s.structure);
  if (cfg_.use_appear) c_appear = hand_appear_embed(b, ag::constant(s.appear_feats));
  std::vector<ag::Var> controls;
  if (cfg_.use_hpa) controls = handpose_forward(b, cfg_, s.pose, c_struc, s.gate, t, z, w_hand).residuals;
  const GarmentEncoding garment = garment_encode(b, s.garment);
  return denoise_step(b, cfg_, z, s.agnostic_latent, t, garment, controls, c_appear, s.gate);
}

ag::Var HandFitModel::predict_eps(Binder& b, const PreparedSample& s, const Tensor& z_t, int t) const {
  return predict_eps(b, s, z_t, t, cfg_.w_hand);
}

Tensor HandFitModel::predict_eps(const PreparedSample& s, const Tensor& z_t, int t) const {
  Binder b(params_);
  return predict_eps(b, s, z_t, t)->val();
}

std::vector<int> inference_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("inference steps must lie in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) {
    int t = steps == 1 ? T - 1 : static_cast<int>(std::lround((T - 1) * (1.0 - static_cast<double>(i) / (steps - 1))));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  return ts;
}

HandFitModel::Output HandFitModel::infer(const PreparedSample& s, int steps, std::uint64_t seed) const {
  return infer(s, steps, seed, cfg_.w_hand);
}

HandFitModel::Output HandFitModel::infer(const PreparedSample& s, int steps, std::uint64_t seed, double w_hand) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z(s.z0.shape());
  for (double& v : z.values()) v = normal(rng);
  const std::vector<int> ts = inference_timesteps(sched_.T, steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    Binder b(params_);
    const Tensor eps = predict_eps(b, s, z, t, w_hand)->val();
    Tensor x0 = predict_z0(z, eps, t, sched_);
    for (double& v : x0.values()) v = std::clamp(v, -1.0, 1.0);
    if (i + 1 == ts.size()) {
      z = x0;
      break;
    }
    const double ab = sched_.alpha_bar(t);
    const double ab_prev = sched_.alpha_bar(ts[i + 1]);
    const double beta = 1.0 - ab / ab_prev;
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = c0 * x0[k] + ct * z[k] + sigma * normal(rng);
  }
  Output out;
  out.raw = decode_latent(z);
  for (double& v : out.raw.values()) v = std::clamp(v, 0.0, 1.0);
  out.composite = composite(out.raw, s.agnostic_image, s.agnostic_mask);
  return out;
}

}  // namespace handfit
