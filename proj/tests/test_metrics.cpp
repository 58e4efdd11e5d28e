#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "handfit/metrics.hpp"
#include "testing.hpp"

using namespace handfit;
using handfit::testing::random_tensor;

namespace {

// Separable-filter SSIM over valid windows; shares only the constants.
double reference_ssim(const Tensor& a, const Tensor& b) {
  const int win = 11, r = 5, h = a.dim(0), w = a.dim(1), C = a.rank() == 3 ? a.dim(2) : 1;
  std::vector<double> g(win);
  double s = 0;
  for (int i = 0; i < win; ++i) s += g[i] = std::exp(-(i - r) * (i - r) / (2 * 1.5 * 1.5));
  for (double& v : g) v /= s;
  auto blur = [&](const std::vector<double>& img) {
    const int oh = h - win + 1, ow = w - win + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x)
        for (int k = 0; k < win; ++k) tmp[y * ow + x] += g[k] * img[y * w + x + k];
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int k = 0; k < win; ++k) out[y * ow + x] += g[k] * tmp[(y + k) * ow + x];
    return out;
  };
  double total = 0;
  std::size_t n = 0;
  for (int c = 0; c < C; ++c) {
    std::vector<double> pa(h * w), pb(h * w), aa(h * w), bb(h * w), ab(h * w);
    for (int i = 0; i < h * w; ++i) {
      pa[i] = a[i * C + c];
      pb[i] = b[i * C + c];
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto ma = blur(pa), mb = blur(pb), saa = blur(aa), sbb = blur(bb), sab = blur(ab);
    const double c1 = 1e-4, c2 = 9e-4;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cv = sab[i] - ma[i] * mb[i];
      total += (2 * ma[i] * mb[i] + c1) * (2 * cv + c2) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      ++n;
    }
  }
  return total / n;
}

double brute_kid(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const double D = x.cols();
  auto k = [&](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    double d = 0;
    for (int i = 0; i < a.size(); ++i) d += a[i] * b[i];
    return std::pow(d / D + 1, 3);
  };
  double sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.rows(); ++j)
      if (i != j) sxx += k(x.row(i), x.row(j));
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.rows(); ++j)
      if (i != j) syy += k(y.row(i), y.row(j));
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < y.rows(); ++j) sxy += k(x.row(i), y.row(j));
  const double m = x.rows(), n = y.rows();
  return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2 * sxy / (m * n);
}

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng, double mean = 0, double sd = 1) {
  std::normal_distribution<double> n(mean, sd);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

}  // namespace

TEST(Ssim, IdentityIsOne) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({20, 24, 3}, rng, 0, 1);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantPatchesClosedForm) {
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(Tensor({16, 16}, 0.0), Tensor({16, 16}, 1.0)), c1 / (1 + c1), 1e-15);
}

TEST(Ssim, MatchesSeparableReference) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_tensor({18, 15, 3}, rng, 0, 1), b = random_tensor({18, 15, 3}, rng, 0, 1);
    EXPECT_NEAR(ssim(a, b), reference_ssim(a, b), 1e-6);
  }
  EXPECT_THROW(ssim(Tensor({16, 16}), Tensor({16, 15})), ShapeError);
}

TEST(DetectJoints, CleanShiftedAndErased) {
  Joints2d gt{};
  for (int j = 0; j < kHandJoints; ++j) gt[j] = {static_cast<double>(5 + (j % 7) * 7), static_cast<double>(5 + (j / 7) * 10)};
  auto stamp = [&](int dx) {
    Tensor img({40, 60, 3}, 0.2);
    for (const auto& p : gt)
      for (int y = -1; y <= 1; ++y)
        for (int x = -1; x <= 1; ++x) {
          img.at(static_cast<int>(p[1]) + y, static_cast<int>(p[0]) + dx + x, 0) = 1;
          img.at(static_cast<int>(p[1]) + y, static_cast<int>(p[0]) + dx + x, 1) = 0;
          img.at(static_cast<int>(p[1]) + y, static_cast<int>(p[0]) + dx + x, 2) = 1;
        }
    return img;
  };
  EXPECT_EQ(detect_joints(stamp(0), gt), gt);
  const Joints2d shifted = detect_joints(stamp(2), gt);
  for (int j = 0; j < kHandJoints; ++j) {
    EXPECT_EQ(shifted[j][0], gt[j][0] + 2);
    EXPECT_EQ(shifted[j][1], gt[j][1]);
  }
  Tensor erased = stamp(0);
  for (int y = 2; y <= 8; ++y)
    for (int x = 2; x <= 8; ++x)
      for (int c = 0; c < 3; ++c) erased.at(y, x, c) = 0.2;
  const Joints2d d = detect_joints(erased, gt);
  EXPECT_EQ(std::hypot(d[0][0] - gt[0][0], d[0][1] - gt[0][1]), 6.0);
  EXPECT_EQ(d[1], gt[1]);
}

TEST(DetectJoints, GeneratedScenesAreExact) {
  for (int seed = 0; seed < 30; ++seed) {
    const SceneSample s = generate_scene(seed);
    for (const auto& h : s.hands.hands)
      if (!h.is_filler()) EXPECT_EQ(mpjpe_2d(detect_joints(s.person, h.joints), h.joints), 0.0) << seed;
  }
}

TEST(Mpjpe, ShiftAndLoopOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 64);
  Joints2d a{}, b{};
  for (int j = 0; j < kHandJoints; ++j) a[j] = {u(rng), u(rng)};
  EXPECT_EQ(mpjpe_2d(a, a), 0.0);
  Joints2d s = a;
  for (auto& p : s) p[0] += 3, p[1] += 4;
  EXPECT_NEAR(mpjpe_2d(s, a), 5.0, 1e-12);
  for (int j = 0; j < kHandJoints; ++j) b[j] = {u(rng), u(rng)};
  double loop = 0;
  for (int j = 0; j < kHandJoints; ++j) loop += std::sqrt((a[j][0] - b[j][0]) * (a[j][0] - b[j][0]) + (a[j][1] - b[j][1]) * (a[j][1] - b[j][1]));
  EXPECT_NEAR(mpjpe_2d(a, b), loop / kHandJoints, 1e-12);
  // Translating both sets together changes nothing.
  Joints2d a2 = a, b2 = b;
  for (auto& p : a2) p[0] += 10;
  for (auto& p : b2) p[0] += 10;
  EXPECT_NEAR(mpjpe_2d(a2, b2), mpjpe_2d(a, b), 1e-12);
  EXPECT_THROW(mpjpe_2d(std::vector<std::array<double, 2>>(3), std::vector<std::array<double, 2>>(2)), std::invalid_argument);
}

TEST(Fid, IdentityAndMeanShift) {
  std::mt19937_64 rng(4);
  const GaussianStats s = fit_gaussian(random_matrix(200, 6, rng));
  EXPECT_EQ(fid(s, s), 0.0);
  GaussianStats t = s;
  t.mean[0] += 0.5;
  t.mean[3] -= 1.0;
  EXPECT_NEAR(fid(s, t), 1.25, 1e-12);
}

TEST(Fid, SymmetricAndNonNegative) {
  std::mt19937_64 rng(5);
  const GaussianStats a = fit_gaussian(random_matrix(100, 5, rng)), b = fit_gaussian(random_matrix(100, 5, rng, 0.3, 1.4));
  EXPECT_NEAR(fid(a, b), fid(b, a), 1e-9);
  EXPECT_GE(fid(a, b), 0.0);
}

TEST(Fid, OneDimensionalClosedForm) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd x = random_matrix(500, 1, rng, 1.0, 2.0), y = random_matrix(400, 1, rng, -0.5, 0.7);
  const GaussianStats a = fit_gaussian(x), b = fit_gaussian(y);
  const double expected = std::pow(a.mean[0] - b.mean[0], 2) + std::pow(std::sqrt(a.cov(0, 0)) - std::sqrt(b.cov(0, 0)), 2);
  EXPECT_NEAR(fid(a, b), expected, 1e-10);
  EXPECT_NEAR(expected, 1.5 * 1.5 + 1.3 * 1.3, 0.5);
}

TEST(Fid, RejectsIndefiniteCovariance) {
  GaussianStats a{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
  GaussianStats b = a;
  b.cov(1, 1) = -1.0;
  EXPECT_THROW(fid(a, b), std::domain_error);
}

TEST(Kid, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int m : {2, 5, 13, 20}) {
    const Eigen::MatrixXd x = random_matrix(m, 4, rng), y = random_matrix(20 - m + 2, 4, rng, 0.2);
    const double b = brute_kid(x, y);
    EXPECT_NEAR(kid(x, y), b, 1e-12 * std::max(1.0, std::abs(b)));
  }
  const Eigen::MatrixXd x = random_matrix(6, 3, rng);
  EXPECT_NEAR(kid(x, x), brute_kid(x, x), 1e-12);
  EXPECT_THROW(kid(random_matrix(1, 3, rng), x), std::invalid_argument);
}

TEST(Kid, SameDistributionNearZero) {
  std::mt19937_64 rng(8);
  EXPECT_LT(std::abs(kid(random_matrix(1500, 8, rng), random_matrix(1500, 8, rng))), 0.01);
}

TEST(RegionStats, CountsAndWidth) {
  std::vector<Tensor> images;
  std::vector<HandParams> hands;
  int slots = 0;
  for (int seed = 0; seed < 10; ++seed) {
    const SceneSample s = generate_scene(seed);
    images.push_back(s.person);
    hands.push_back(s.hands);
    slots += s.hands.count();
  }
  const Eigen::MatrixXd f = region_stats(images, hands);
  EXPECT_EQ(f.rows(), slots);
  EXPECT_EQ(f.cols(), kFeatureDim);
  EXPECT_EQ(fid(fit_gaussian(f), fit_gaussian(region_stats(images, hands))), 0.0);
  EXPECT_THROW(region_stats({images[0]}, {pad_hands({}, 64, 64)}), std::invalid_argument);
}

TEST(Evaluate, PerfectPairedReport) {
  std::vector<SceneSample> ref;
  std::vector<Tensor> gen;
  for (int seed = 0; seed < 6; ++seed) {
    ref.push_back(generate_scene(seed, {.size = 64, .hands = 2}));
    gen.push_back(ref.back().person);
  }
  const EvalReport r = evaluate(gen, ref, EvalMode::Paired);
  EXPECT_EQ(r.metrics.size(), 6u);
  EXPECT_NEAR(r.metrics.at("ssim"), 1.0, 1e-12);
  EXPECT_EQ(r.metrics.at("mpjpe"), 0.0);
  EXPECT_EQ(r.metrics.at("fid"), 0.0);
  EXPECT_EQ(r.metrics.at("fid_h"), 0.0);
  EXPECT_EQ(r.hand_crops, 12);

  const EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.samples, r.samples);
  EXPECT_NE(r.table().find("fid_h"), std::string::npos);
}

TEST(Evaluate, UnpairedRefusesSsim) {
  std::vector<SceneSample> ref;
  std::vector<Tensor> gen;
  for (int seed = 0; seed < 4; ++seed) {
    ref.push_back(make_pair(generate_scene(seed, {.size = 64, .hands = 1}), generate_scene(seed + 9).garment));
    gen.push_back(ref.back().person);
  }
  EXPECT_THROW(evaluate(gen, ref, EvalMode::Unpaired, {"ssim"}), std::invalid_argument);
  EXPECT_THROW(evaluate(gen, ref, EvalMode::Paired), std::invalid_argument);
  const EvalReport r = evaluate(gen, ref, EvalMode::Unpaired);
  EXPECT_EQ(r.metrics.count("ssim"), 0u);
  EXPECT_EQ(r.metrics.size(), 5u);
  EXPECT_THROW(eval_mode_from_string("both"), std::invalid_argument);
}
