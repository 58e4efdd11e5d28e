#include "handfit/tryon_core.hpp"

#include <stdexcept>

#include "handfit/handpose_net.hpp"
#include "handfit/handprior.hpp"

namespace handfit {

namespace {

void check_gate(const Tensor& gate) {
  for (double g : gate.values())
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("attention gate must be binary");
}

void init_block(ParameterStore& s, const std::string& p, int cin, int cout, int d, std::uint64_t seed) {
  nn::init_conv(s, p + ".conv1", 3, cin, cout, seed);
  nn::init_linear(s, p + ".time", d, cout, seed);
  nn::init_conv(s, p + ".conv2", 3, cout, cout, seed);
  if (cin != cout) nn::init_conv(s, p + ".skip", 1, cin, cout, seed);
}

ag::Var block(Binder& b, const std::string& p, const ag::Var& x, const ag::Var& temb) {
  ag::Var h = nn::conv(b, p + ".conv1", ag::silu(x));
  const ag::Var tp = nn::linear(b, p + ".time", temb);
  h = ag::add_bias(h, ag::reshape(tp, {tp->shape()[1]}));
  h = nn::conv(b, p + ".conv2", ag::silu(h));
  const ag::Var skip = b.has(p + ".skip.w") ? nn::conv(b, p + ".skip", x) : x;
  return ag::add(h, skip);
}

void init_attention(ParameterStore& s, const std::string& p, int dq, int dkv, std::uint64_t seed) {
  nn::init_linear(s, p + ".q", dq, dq, seed, false);
  nn::init_linear(s, p + ".k", dkv, dq, seed, false);
  nn::init_linear(s, p + ".v", dkv, dq, seed, false);
}

ag::Var attend(Binder& b, const std::string& p, const ag::Var& h, const ag::Var& tokens, int heads, const Tensor* gate) {
  const Shape s = h->shape();
  const ag::Var flat = ag::reshape(h, {s[0] * s[1], s[2]});
  const ag::Var out = ag::attention(nn::linear(b, p + ".q", flat), nn::linear(b, p + ".k", tokens),
                                    nn::linear(b, p + ".v", tokens), heads, gate);
  return ag::add(h, ag::reshape(out, s));
}

ag::Var add_control(const std::vector<ag::Var>& controls, ControlSite site, const ag::Var& h) {
  if (controls.empty()) return h;
  const ag::Var& c = controls[static_cast<int>(site)];
  if (c->shape() != h->shape())
    throw ShapeError("control residual " + shape_str(c->shape()) + " does not match site activation " + shape_str(h->shape()));
  return ag::add(h, c);
}

}  // namespace

Tensor masked_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& gate) {
  return masked_cross_attention(ag::constant(q), ag::constant(k), ag::constant(v), gate)->val();
}

ag::Var masked_cross_attention(const ag::Var& q, const ag::Var& k, const ag::Var& v, const Tensor& gate, int heads) {
  check_gate(gate);
  return ag::attention(q, k, v, heads, &gate);
}

void init_denoiser(ParameterStore& s, const ModelConfig& cfg) {
  const int d = cfg.d_model;
  const auto seed = cfg.seed;
  nn::init_conv(s, "denoiser.in", 1, 2 * kLatentChannels, d, seed);
  nn::init_conv(s, "denoiser.garment_in", 1, kLatentChannels, d, seed);
  nn::init_linear(s, "denoiser.time", d, d, seed);
  init_block(s, "denoiser.enc1", d, d, d, seed);
  nn::init_conv(s, "denoiser.down1", 3, d, 2 * d, seed);
  init_block(s, "denoiser.enc2", 2 * d, 2 * d, d, seed);
  nn::init_conv(s, "denoiser.down2", 3, 2 * d, 4 * d, seed);
  init_block(s, "denoiser.enc3", 4 * d, 4 * d, d, seed);
  init_block(s, "denoiser.mid", 4 * d, 4 * d, d, seed);
  init_attention(s, "denoiser.garment_attn", 4 * d, d, seed);
  if (cfg.use_appear) init_attention(s, "denoiser.appear_attn", 4 * d, d, seed);
  init_block(s, "denoiser.dec2", 6 * d, 2 * d, d, seed);
  init_block(s, "denoiser.dec1", 3 * d, d, d, seed);
  nn::init_conv(s, "denoiser.out", 3, d, kLatentChannels, seed);
}

ag::Var denoise_step(Binder& b, const ModelConfig& cfg, const ag::Var& z_t, const Tensor& agnostic_latent, int t,
                     const GarmentEncoding& garment, const std::vector<ag::Var>& controls, const ag::Var& c_appear,
                     const Tensor& gate, DenoiserTrace* trace) {
  const int d = cfg.d_model;
  const Shape& zs = z_t->shape();
  if (zs.size() != 3 || zs[2] != kLatentChannels || zs[0] % 4 || zs[1] % 4)
    throw ShapeError("denoise_step: latent " + shape_str(zs) + " must be [L, L, 192] with L divisible by 4");
  if (agnostic_latent.shape() != zs || garment.latent.shape() != zs)
    throw ShapeError("denoise_step: agnostic/garment latent shapes differ from z_t");
  if (gate.shape() != Shape{zs[0], zs[1]}) throw ShapeError("denoise_step: gate " + shape_str(gate.shape()) + " vs latent");
  if (!controls.empty() && controls.size() != kControlSites) throw ShapeError("denoise_step: need 0 or 3 control residuals");
  check_gate(gate);

  const ag::Var temb = ag::silu(nn::linear(b, "denoiser.time", ag::constant(nn::timestep_embedding(t, d))));

  ag::Var h = nn::conv(b, "denoiser.in", ag::concat_channels(z_t, ag::constant(agnostic_latent)));
  h = ag::add(h, nn::conv(b, "denoiser.garment_in", ag::constant(garment.latent)));
  h = block(b, "denoiser.enc1", h, temb);
  h = add_control(controls, ControlSite::Encoder, h);
  const ag::Var skip1 = h;
  h = block(b, "denoiser.enc2", nn::conv(b, "denoiser.down1", h, 2), temb);
  const ag::Var skip2 = h;
  h = block(b, "denoiser.enc3", nn::conv(b, "denoiser.down2", h, 2), temb);
  h = block(b, "denoiser.mid", h, temb);
  h = add_control(controls, ControlSite::Bottleneck, h);
  if (trace) trace->bottleneck_pre_attention = h->val();

  h = attend(b, "denoiser.garment_attn", h, garment.tokens, cfg.heads, nullptr);
  if (cfg.use_appear) {
    if (!c_appear) throw std::invalid_argument("denoise_step: appearance pathway enabled but c_appear missing");
    const Tensor g = downsample_gate(gate, 4);
    const Tensor flat = g.reshaped({static_cast<int>(g.size())});
    h = attend(b, "denoiser.appear_attn", h, c_appear, cfg.heads, &flat);
  }
  if (trace) trace->bottleneck = h->val();

  h = block(b, "denoiser.dec2", ag::concat_channels(ag::upsample2x(h), skip2), temb);
  h = add_control(controls, ControlSite::Decoder, h);
  h = block(b, "denoiser.dec1", ag::concat_channels(ag::upsample2x(h), skip1), temb);
  return nn::conv(b, "denoiser.out", ag::silu(h));
}

}  // namespace handfit
