#include <gtest/gtest.h>

#include <random>

#include "handfit/handpose_net.hpp"
#include "handfit/synthdata.hpp"
#include "testing.hpp"

using namespace handfit;
using handfit::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.image_size = 64;
  return c;
}

PoseMaps random_maps(int size, std::mt19937_64& rng) {
  return {random_tensor({size, size, 3}, rng, 0, 1), random_tensor({size, size, 4}, rng, 0, 1),
          random_tensor({size, size, 1}, rng, 0, 1)};
}

// Replaces every zero-initialised tensor with random values so the tests
// exercise a "trained" network.
void randomize(ParameterStore& s, std::mt19937_64& rng) {
  for (auto& [name, t] : s.items())
    if (max_abs(t) == 0.0) t = random_tensor(t.shape(), rng, -0.3, 0.3);
}

}  // namespace

TEST(ZeroMultilayer, FreshOutputIsZero) {
  std::mt19937_64 rng(1);
  ParameterStore s;
  init_zero_multilayer(s, "z", 3, 8, 5);
  EXPECT_EQ(max_abs(s.get("z.zero.w")), 0.0);
  EXPECT_EQ(max_abs(s.get("z.zero.b")), 0.0);
  Binder b(s);
  const Tensor out = zero_multilayer_forward(b, "z", ag::constant(random_tensor({32, 24, 3}, rng)))->val();
  EXPECT_EQ(out.shape(), (Shape{4, 3, 8}));
  EXPECT_EQ(max_abs(out), 0.0);
}

TEST(ZeroMultilayer, SingleWeightSensitivity) {
  std::mt19937_64 rng(2);
  ParameterStore s;
  init_zero_multilayer(s, "z", 3, 8, 5);
  s.get("z.zero.w")[3] = 1e-3;
  Binder b(s);
  const Tensor out = zero_multilayer_forward(b, "z", ag::constant(random_tensor({16, 16, 3}, rng)))->val();
  EXPECT_GT(max_abs(out), 0.0);
}

TEST(ZeroMultilayer, SevenConvLayers) {
  ParameterStore s;
  init_zero_multilayer(s, "z", 4, 8, 5);
  int convs = 0;
  for (const auto& k : s.keys()) convs += k.ends_with(".w") && k.find(".conv") != std::string::npos;
  EXPECT_EQ(convs, kZeroMultilayerConvs);
  Binder b(s);
  EXPECT_THROW(zero_multilayer_forward(b, "z", ag::constant(Tensor({12, 16, 4}))), ShapeError);
}

TEST(Aggregate, Definitions) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({2, 2, 4}, rng), b = random_tensor({2, 2, 4}, rng), c = random_tensor({2, 2, 4}, rng);
  const Tensor z(a.shape());
  Tensor ab = a;
  ab += b;
  EXPECT_EQ(aggregate(a, b, c, 0.0), ab);
  EXPECT_EQ(aggregate(z, z, c, 1.0), c);
  EXPECT_THROW(aggregate(a, b, Tensor({2, 2, 3}), 1.0), ShapeError);
}

TEST(Aggregate, LinearInWHand) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({3, 3, 5}, rng), b = random_tensor({3, 3, 5}, rng), f = random_tensor({3, 3, 5}, rng);
    const Tensor z(a.shape());
    const double wa = u(rng), wb = u(rng);
    Tensor lhs = aggregate(a, b, f, wa);
    lhs += aggregate(z, z, f, wb);
    EXPECT_LT(max_abs_diff(lhs, aggregate(a, b, f, wa + wb)), 1e-12);
  }
}

TEST(Aggregate, VarMatchesTensorAndSkipsAbsentBranches) {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({2, 2, 3}, rng), c = random_tensor({2, 2, 3}, rng);
  const Tensor v = aggregate(ag::constant(a), nullptr, ag::constant(c), 0.7)->val();
  EXPECT_EQ(v, aggregate(a, Tensor(a.shape()), c, 0.7));
  EXPECT_THROW(aggregate(ag::Var{}, ag::Var{}, ag::Var{}, 1.0), std::invalid_argument);
}

TEST(HandPoseForward, FreshResidualsAreZero) {
  std::mt19937_64 rng(6);
  const ModelConfig cfg = small_config();
  ParameterStore s;
  init_handpose_net(s, cfg);
  Binder b(s);
  const PoseMaps maps = random_maps(64, rng);
  Tensor gate({8, 8});
  gate.at(2, 3) = 1;
  const HandPoseOutput out = handpose_forward(b, cfg, maps, ag::constant(random_tensor({8, 8}, rng)), gate, 17,
                                              ag::constant(random_tensor({8, 8, 192}, rng)), 1.0);
  ASSERT_EQ(out.residuals.size(), 3u);
  for (int i = 0; i < kControlSites; ++i) {
    EXPECT_EQ(out.residuals[i]->shape(), control_shape(static_cast<ControlSite>(i), 8, cfg.d_model));
    EXPECT_EQ(max_abs(out.residuals[i]->val()), 0.0);
  }
}

TEST(HandPoseForward, StructPerturbationStaysInsideGate) {
  std::mt19937_64 rng(7);
  const ModelConfig cfg = small_config();
  ParameterStore s;
  init_handpose_net(s, cfg);
  randomize(s, rng);
  const PoseMaps maps = random_maps(64, rng);
  const Tensor z = random_tensor({8, 8, 192}, rng);
  Tensor gate({8, 8});
  for (int y = 2; y < 5; ++y)
    for (int x = 1; x < 4; ++x) gate.at(y, x) = 1;

  auto run = [&](const Tensor& c) {
    Binder b(s);
    const HandPoseOutput o = handpose_forward(b, cfg, maps, ag::constant(c), gate, 40, ag::constant(z), 1.0);
    return std::pair{o.features->val(), o.residuals[0]->val()};
  };
  const auto [f1, r1] = run(random_tensor({8, 8}, rng));
  const auto [f2, r2] = run(Tensor({8, 8}));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 8; ++c) {
        if (gate.at(y, x) == 0) {
          EXPECT_EQ(f1.at(y, x, c), f2.at(y, x, c));
          EXPECT_EQ(r1.at(y, x, c), r2.at(y, x, c));
        }
      }
  EXPECT_GT(max_abs_diff(f1, f2), 0.0);
}

TEST(HandPoseForward, WHandScalesDepthBranchOnly) {
  std::mt19937_64 rng(8);
  ModelConfig cfg = small_config();
  cfg.use_struct = false;
  ParameterStore s;
  init_handpose_net(s, cfg);
  randomize(s, rng);
  const PoseMaps maps = random_maps(64, rng);
  const Tensor z = random_tensor({8, 8, 192}, rng), gate({8, 8});
  auto features = [&](double w) {
    Binder b(s);
    return handpose_forward(b, cfg, maps, nullptr, gate, 3, ag::constant(z), w).features->val();
  };
  // Features are affine in w_hand: f(2) - f(1) == f(1) - f(0).
  const Tensor f2 = features(2.0), f1 = features(1.0), f0 = features(0.0);
  for (std::size_t i = 0; i < f2.size(); ++i) EXPECT_NEAR(f2[i] - f1[i], f1[i] - f0[i], 1e-10);
}

TEST(HandPoseForward, BranchFlagsControlParameters) {
  ModelConfig cfg = small_config();
  cfg.hpa_dwpose = false;
  cfg.hpa_depth = false;
  ParameterStore s;
  init_handpose_net(s, cfg);
  for (const auto& k : s.keys()) {
    EXPECT_EQ(k.find("handpose.dwpose"), std::string::npos);
    EXPECT_EQ(k.find("handpose.depth"), std::string::npos);
  }
  EXPECT_TRUE(s.contains("handpose.densepose.zero.w"));
}
