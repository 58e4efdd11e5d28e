#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "handfit/handpose_net.hpp"
#include "handfit/model.hpp"
#include "handfit/tryon_core.hpp"
#include "testing.hpp"

using namespace handfit;
using handfit::testing::check_gradients;
using handfit::testing::gaussian_tensor;
using handfit::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.image_size = 32;
  return c;
}

struct DenoiserInputs {
  Tensor z, agn, garment, c_appear, gate;
  int t = 0;
};

DenoiserInputs random_inputs(int L, int d, std::mt19937_64& rng) {
  DenoiserInputs in;
  in.z = gaussian_tensor({L, L, 192}, rng);
  in.agn = random_tensor({L, L, 192}, rng);
  in.garment = random_tensor({8 * L, 8 * L, 3}, rng, 0, 1);
  in.c_appear = random_tensor({2, d}, rng);
  in.gate = Tensor({L, L});
  in.t = std::uniform_int_distribution<int>(0, 999)(rng);
  return in;
}

Tensor run(const ParameterStore& s, const ModelConfig& cfg, const DenoiserInputs& in, const std::vector<ag::Var>& controls) {
  Binder b(s);
  const GarmentEncoding g = garment_encode(b, in.garment);
  return denoise_step(b, cfg, ag::constant(in.z), in.agn, in.t, g, controls, ag::constant(in.c_appear), in.gate)->val();
}

}  // namespace

TEST(MaskedAttention, GateAllOnesIsPlainAttention) {
  std::mt19937_64 rng(1);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 4}, rng);
  const Tensor plain = ag::attention(ag::constant(q), ag::constant(k), ag::constant(v), 1, nullptr)->val();
  EXPECT_EQ(masked_cross_attention(q, k, v, Tensor({5}, 1.0)), plain);
  EXPECT_EQ(max_abs(masked_cross_attention(q, k, v, Tensor({5}, 0.0))), 0.0);
}

TEST(MaskedAttention, SingletonKeyReturnsValueRow) {
  std::mt19937_64 rng(2);
  const Tensor q = random_tensor({4, 6}, rng), k = random_tensor({1, 6}, rng), v = random_tensor({1, 6}, rng);
  const Tensor gate({4}, std::vector<double>{1, 0, 1, 0});
  const Tensor out = masked_cross_attention(q, k, v, gate);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 6; ++c) EXPECT_EQ(out.at(i, c), gate[i] * v.at(0, c));
}

TEST(MaskedAttention, RejectsBadInputs) {
  const Tensor q({2, 4}), k({3, 4}), v({3, 4});
  EXPECT_THROW(masked_cross_attention(q, Tensor({3, 5}), v, Tensor({2}, 1.0)), ShapeError);
  EXPECT_THROW(masked_cross_attention(q, Tensor({0, 4}), Tensor({0, 4}), Tensor({2}, 1.0)), ShapeError);
  EXPECT_THROW(masked_cross_attention(q, k, v, Tensor({2}, 0.5)), std::invalid_argument);
}

TEST(MaskedAttention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Tensor gate({6}, std::vector<double>{1, 1, 0, 1, 0, 1});
  const Tensor w = random_tensor({6, 8}, rng);
  const auto r = check_gradients(
      [&](const auto& x) { return ag::sum(ag::mul(masked_cross_attention(x[0], x[1], x[2], gate, 2), ag::constant(w))); },
      {random_tensor({6, 8}, rng), random_tensor({4, 8}, rng), random_tensor({4, 8}, rng)});
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(Denoiser, ChannelContract) {
  const ModelConfig cfg = tiny_config();
  ParameterStore s;
  init_denoiser(s, cfg);
  EXPECT_EQ(s.get("denoiser.in.w").shape(), (Shape{1, 1, 384, 8}));
  EXPECT_EQ(s.get("denoiser.out.w").dim(3), 192);
  std::mt19937_64 rng(4);
  init_garment_encoder(s, cfg.d_model, cfg.seed);
  init_appear_encoder(s, cfg.d_model, cfg.seed);
  const DenoiserInputs in = random_inputs(4, 8, rng);
  EXPECT_EQ(run(s, cfg, in, {}).shape(), (Shape{4, 4, 192}));
}

TEST(Denoiser, FreshControlsAreNeutral) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const DenoiserInputs in = random_inputs(4, 8, rng);
    Binder b(model.params());
    const PoseMaps maps{random_tensor({32, 32, 3}, rng, 0, 1), random_tensor({32, 32, 4}, rng, 0, 1),
                        random_tensor({32, 32, 1}, rng, 0, 1)};
    const auto controls = handpose_forward(b, cfg, maps, ag::constant(random_tensor({8, 8}, rng)), in.gate, in.t,
                                           ag::constant(in.z), 1.0)
                              .residuals;
    EXPECT_EQ(run(model.params(), cfg, in, controls), run(model.params(), cfg, in, {}));
  }
}

TEST(Denoiser, ZeroGateIgnoresAppearance) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  std::mt19937_64 rng(6);
  DenoiserInputs in = random_inputs(4, 8, rng);
  const Tensor ref = run(model.params(), cfg, in, {});
  for (int trial = 0; trial < 5; ++trial) {
    in.c_appear = random_tensor({2, 8}, rng, -5, 5);
    EXPECT_EQ(run(model.params(), cfg, in, {}), ref);
  }
  in.gate.at(1, 1) = 1;
  EXPECT_NE(run(model.params(), cfg, in, {}), ref);
}

TEST(Denoiser, Deterministic) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  std::mt19937_64 rng(7);
  const DenoiserInputs in = random_inputs(4, 8, rng);
  EXPECT_EQ(run(model.params(), cfg, in, {}), run(model.params(), cfg, in, {}));
}

TEST(Denoiser, RejectsMismatchedControls) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  std::mt19937_64 rng(8);
  const DenoiserInputs in = random_inputs(4, 8, rng);
  const std::vector<ag::Var> bad = {ag::constant(Tensor({4, 4, 8})), ag::constant(Tensor({1, 1, 32})),
                                    ag::constant(Tensor({1, 1, 16}))};
  EXPECT_THROW(run(model.params(), cfg, in, bad), ShapeError);
  EXPECT_THROW(run(model.params(), cfg, in, {ag::constant(Tensor({4, 4, 8}))}), ShapeError);
}

TEST(Denoiser, InputGradientMatchesFiniteDifferences) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  std::mt19937_64 rng(9);
  DenoiserInputs in = random_inputs(4, 8, rng);
  in.gate.at(0, 1) = 1;
  const Tensor w = random_tensor({4, 4, 192}, rng);
  const auto r = check_gradients(
      [&](const auto& x) {
        Binder b(model.params());
        const GarmentEncoding g = garment_encode(b, in.garment);
        return ag::sum(ag::mul(denoise_step(b, cfg, x[0], in.agn, in.t, g, {}, x[1], in.gate), ag::constant(w)));
      },
      {in.z, in.c_appear}, 1e-5, 48);
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(Inference, TimestepsDescendAndCover) {
  const auto ts = inference_timesteps(1000, 20);
  EXPECT_EQ(ts.front(), 999);
  EXPECT_EQ(ts.back(), 0);
  EXPECT_TRUE(std::is_sorted(ts.rbegin(), ts.rend()));
  EXPECT_EQ(inference_timesteps(1000, 1), std::vector<int>{999});
  EXPECT_THROW(inference_timesteps(10, 0), std::invalid_argument);
}

TEST(Inference, SeededDeterminismAndCompositing) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  const SceneSample s = generate_scene(3, {.size = 32, .hands = 1});
  const PreparedSample p = model.prepare(s);
  const auto a = model.infer(p, 3, 42), b = model.infer(p, 3, 42), c = model.infer(p, 3, 43);
  EXPECT_EQ(a.composite, b.composite);
  EXPECT_NE(a.raw, c.raw);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (s.agnostic_mask.at(y, x) == 0)
        for (int k = 0; k < 3; ++k) EXPECT_EQ(a.composite.at(y, x, k), s.person.at(y, x, k));
}

TEST(Inference, OneStepIsSinglePrediction) {
  const ModelConfig cfg = tiny_config();
  const HandFitModel model(cfg);
  const SceneSample s = generate_scene(4, {.size = 32, .hands = 2});
  const PreparedSample p = model.prepare(s);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0, 1);
  Tensor z(p.z0.shape());
  for (double& v : z.values()) v = n(rng);
  Tensor x0 = predict_z0(z, model.predict_eps(p, z, 999), 999, model.schedule());
  for (double& v : x0.values()) v = std::clamp(v, -1.0, 1.0);
  Tensor expected = decode_latent(x0);
  for (double& v : expected.values()) v = std::clamp(v, 0.0, 1.0);
  EXPECT_EQ(model.infer(p, 1, 77).raw, expected);
}
