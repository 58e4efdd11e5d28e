#include "handfit/handpose_net.hpp"

#include <stdexcept>

#include "handfit/encoders.hpp"

namespace handfit {

namespace {
constexpr int kWidths[kZeroMultilayerConvs] = {16, 32, 32, 32, 32, 32, 32};
constexpr int kStrides[kZeroMultilayerConvs] = {2, 2, 2, 1, 1, 1, 1};
}  // namespace

Shape control_shape(ControlSite site, int latent, int d) {
  switch (site) {
    case ControlSite::Encoder: return {latent, latent, d};
    case ControlSite::Bottleneck: return {latent / 4, latent / 4, 4 * d};
    case ControlSite::Decoder: return {latent / 2, latent / 2, 2 * d};
  }
  throw std::logic_error("bad control site");
}

void init_zero_multilayer(ParameterStore& s, const std::string& prefix, int in_channels, int d, std::uint64_t seed) {
  int cin = in_channels;
  for (int i = 0; i < kZeroMultilayerConvs; ++i) {
    nn::init_conv(s, prefix + ".conv" + std::to_string(i), 3, cin, kWidths[i], seed);
    cin = kWidths[i];
  }
  nn::init_conv(s, prefix + ".zero", 1, cin, d, seed, /*zero=*/true);
}

ag::Var zero_multilayer_forward(Binder& b, const std::string& prefix, const ag::Var& map) {
  const Shape& s = map->shape();
  if (s.size() != 3 || s[0] % 8 || s[1] % 8)
    throw ShapeError("zero_multilayer_forward: map " + shape_str(s) + " must be [H, W, C] with H, W divisible by 8");
  ag::Var h = map;
  for (int i = 0; i < kZeroMultilayerConvs; ++i) h = ag::silu(nn::conv(b, prefix + ".conv" + std::to_string(i), h, kStrides[i]));
  return nn::conv(b, prefix + ".zero", h);
}

Tensor aggregate(const Tensor& f_dw, const Tensor& f_dp, const Tensor& f_rh, double w_hand) {
  require_same_shape(f_dw, f_dp, "aggregate");
  require_same_shape(f_dw, f_rh, "aggregate");
  Tensor out(f_dw.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_dw[i] + f_dp[i] + f_rh[i] * w_hand;
  return out;
}

ag::Var aggregate(const ag::Var& f_dw, const ag::Var& f_dp, const ag::Var& f_rh, double w_hand) {
  ag::Var acc;
  auto accumulate = [&acc](const ag::Var& v) { acc = acc ? ag::add(acc, v) : v; };
  if (f_dw) accumulate(f_dw);
  if (f_dp) accumulate(f_dp);
  if (f_rh) accumulate(ag::scale(f_rh, w_hand));
  if (!acc) throw std::invalid_argument("aggregate: no branch enabled");
  return acc;
}

void init_handpose_net(ParameterStore& s, const ModelConfig& cfg) {
  const int d = cfg.d_model;
  if (cfg.hpa_dwpose) init_zero_multilayer(s, "handpose.dwpose", 3, d, cfg.seed);
  if (cfg.hpa_densepose) init_zero_multilayer(s, "handpose.densepose", 4, d, cfg.seed);
  if (cfg.hpa_depth) init_zero_multilayer(s, "handpose.depth", 1, d, cfg.seed);
  nn::init_linear(s, "handpose.time", d, d, cfg.seed);
  nn::init_conv(s, "handpose.zin", 1, kLatentChannels, d, cfg.seed);
  if (cfg.use_struct) {
    nn::init_linear(s, "handpose.attn.q", d, d, cfg.seed, false);
    nn::init_linear(s, "handpose.attn.k", d, d, cfg.seed, false);
    nn::init_linear(s, "handpose.attn.v", d, d, cfg.seed, false);
  }
  nn::init_conv(s, "handpose.res0", 1, d, d, cfg.seed, true);
  nn::init_conv(s, "handpose.res1", 1, d, 4 * d, cfg.seed, true);
  nn::init_conv(s, "handpose.res2", 1, d, 2 * d, cfg.seed, true);
}

HandPoseOutput handpose_forward(Binder& b, const ModelConfig& cfg, const PoseMaps& maps, const ag::Var& c_struc,
                                const Tensor& gate, int t, const ag::Var& z_in, double w_hand) {
  const int d = cfg.d_model;
  const int lat = z_in->shape()[0];
  if (gate.shape() != Shape{lat, lat}) throw ShapeError("handpose_forward: gate " + shape_str(gate.shape()) + " vs latent " + shape_str(z_in->shape()));
  ag::Var f_dw, f_dp, f_rh;
  if (cfg.hpa_dwpose) f_dw = zero_multilayer_forward(b, "handpose.dwpose", ag::constant(maps.dwpose));
  if (cfg.hpa_densepose) f_dp = zero_multilayer_forward(b, "handpose.densepose", ag::constant(maps.densepose));
  if (cfg.hpa_depth) f_rh = zero_multilayer_forward(b, "handpose.depth", ag::constant(maps.hand_depth));
  ag::Var h = aggregate(f_dw, f_dp, f_rh, w_hand);
  if (h->shape() != Shape{lat, lat, d}) throw ShapeError("handpose_forward: branch output " + shape_str(h->shape()) + " does not match latent");

  const ag::Var temb = ag::silu(nn::linear(b, "handpose.time", ag::constant(nn::timestep_embedding(t, d))));
  h = ag::add_bias(h, ag::reshape(temb, {d}));
  h = ag::add(h, nn::conv(b, "handpose.zin", z_in));

  if (cfg.use_struct) {
    if (!c_struc) throw std::invalid_argument("handpose_forward: structural pathway enabled but c_struc missing");
    const ag::Var flat = ag::reshape(h, {lat * lat, d});
    const ag::Var q = nn::linear(b, "handpose.attn.q", flat);
    const ag::Var k = nn::linear(b, "handpose.attn.k", c_struc);
    const ag::Var v = nn::linear(b, "handpose.attn.v", c_struc);
    const Tensor g = gate.reshaped({lat * lat});
    h = ag::add(h, ag::reshape(ag::attention(q, k, v, cfg.heads, &g), {lat, lat, d}));
  }

  HandPoseOutput out;
  out.features = h;
  out.residuals.resize(kControlSites);
  out.residuals[0] = nn::conv(b, "handpose.res0", h);
  out.residuals[1] = nn::conv(b, "handpose.res1", ag::avg_pool(h, 4));
  out.residuals[2] = nn::conv(b, "handpose.res2", ag::avg_pool(h, 2));
  return out;
}

}  // namespace handfit
