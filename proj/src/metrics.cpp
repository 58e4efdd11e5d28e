#include "handfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "handfit/image.hpp"

namespace handfit {

using nlohmann::json;

namespace {

Tensor as_hwc(const Tensor& t) { return t.rank() == 2 ? t.reshaped({t.dim(0), t.dim(1), 1}) : t; }

std::vector<double> gaussian_window(int window, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(window));
  int r = window / 2;
  double total = 0;
  for (int i = 0; i < window; ++i) {
    g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

}  // namespace

double ssim(const Tensor& a_in, const Tensor& b_in, int window) {
  require_same_shape(a_in, b_in, "ssim");
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("ssim window must be odd and positive");
  Tensor a = as_hwc(a_in), b = as_hwc(b_in);
  int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  if (h < window || w < window) throw std::invalid_argument("image smaller than the ssim window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> g = gaussian_window(window, 1.5);
  double total = 0;
  long count = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y + window <= h; ++y)
      for (int x = 0; x + window <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            double wt = g[dy] * g[dx];
            double va = a.at(y + dy, x + dx, ch), vb = b.at(y + dy, x + dx, ch);
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / count;
}

Joints2d detect_joints(const Tensor& image, const Joints2d& gt, int radius) {
  if (radius < 1) throw std::invalid_argument("detect_joints radius must be at least 1");
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("detect_joints expects an [H, W, 3] image");
  int h = image.dim(0), w = image.dim(1);
  Tensor score({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      score.at(y, x) =
          std::clamp((image.at(y, x, 0) + image.at(y, x, 2) - 2 * image.at(y, x, 1)) / 2.0, 0.0, 1.0);
  // 3x3 box response, so a whole marker beats a partial one.
  auto response = [&](int x, int y) {
    double s = 0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int xx = x + dx, yy = y + dy;
        if (xx >= 0 && yy >= 0 && xx < w && yy < h) s += score.at(yy, xx);
      }
    return s / 9.0;
  };
  Joints2d out{};
  for (int j = 0; j < kHandJoints; ++j) {
    double gx = gt[j][0], gy = gt[j][1];
    int cx = static_cast<int>(std::lround(gx)), cy = static_cast<int>(std::lround(gy));
    double best = -1, best_d = 0;
    int bx = cx, by = cy;
    for (int y = cy - radius; y <= cy + radius; ++y)
      for (int x = cx - radius; x <= cx + radius; ++x) {
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        double r = response(x, y);
        double d = std::hypot(x - gx, y - gy);
        if (r > best || (r == best && d < best_d)) {
          best = r;
          best_d = d;
          bx = x;
          by = y;
        }
      }
    if (best < kJointMissThreshold) out[j] = {gx + radius, gy};
    else out[j] = {static_cast<double>(bx), static_cast<double>(by)};
  }
  return out;
}

double mpjpe_2d(const std::vector<std::array<double, 2>>& pred, const std::vector<std::array<double, 2>>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("mpjpe_2d joint counts differ");
  if (pred.empty()) throw std::invalid_argument("mpjpe_2d needs at least one joint");
  double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::hypot(pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]);
  return total / static_cast<double>(pred.size());
}

double mpjpe_2d(const Joints2d& pred, const Joints2d& gt) {
  return mpjpe_2d(std::vector<std::array<double, 2>>(pred.begin(), pred.end()),
                  std::vector<std::array<double, 2>>(gt.begin(), gt.end()));
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& f) {
  if (f.rows() < 1) throw std::invalid_argument("fit_gaussian needs at least one sample");
  if (f.rows() <= f.cols())
    std::cerr << "warning: fitting a " << f.cols() << "-d Gaussian to " << f.rows() << " samples\n";
  GaussianStats s;
  s.mean = f.colwise().mean().transpose();
  Eigen::MatrixXd centered = f.rowwise() - s.mean.transpose();
  s.cov = f.rows() > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(f.rows() - 1))
                       : Eigen::MatrixXd::Zero(f.cols(), f.cols());
  return s;
}

namespace {

constexpr double kPsdTol = 1e-8;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -kPsdTol) throw std::domain_error(std::string(what) + " is not positive semi-definite");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size())
    throw std::invalid_argument("fid statistics have mismatched dimensions");
  double mean_term = (a.mean - b.mean).squaredNorm();
  if (a.cov == b.cov) return mean_term;
  Eigen::MatrixXd sa = psd_sqrt(a.cov, "first covariance");
  psd_sqrt(b.cov, "second covariance");
  Eigen::MatrixXd inner = sa * b.cov * sa;
  Eigen::MatrixXd root = psd_sqrt(inner, "covariance product");
  double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * root.trace();
  return std::max(d, 0.0);
}

double kid(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("kid needs at least two samples per set");
  if (x.cols() != y.cols()) throw std::invalid_argument("kid feature widths differ");
  const double dim = static_cast<double>(x.cols());
  auto k = [&](const Eigen::MatrixXd& p, Eigen::Index i, const Eigen::MatrixXd& q, Eigen::Index j) {
    double v = p.row(i).dot(q.row(j)) / dim + 1.0;
    return v * v * v;
  };
  const Eigen::Index m = x.rows(), n = y.rows();
  double kxx = 0, kyy = 0, kxy = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) kxx += k(x, i, x, j);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) kyy += k(y, i, y, j);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) kxy += k(x, i, y, j);
  return kxx / static_cast<double>(m * (m - 1)) + kyy / static_cast<double>(n * (n - 1)) -
         2.0 * kxy / static_cast<double>(m * n);
}

std::vector<double> default_features(const Tensor& image) {
  if (image.shape() != Shape{kCropSize, kCropSize, 3})
    throw ShapeError("feature extractor expects a 32x32x3 image, got " + shape_str(image.shape()));
  std::vector<double> f;
  f.reserve(kFeatureDim);
  const int cell = kCropSize / 4;
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 4; ++gx)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int y = 0; y < cell; ++y)
          for (int x = 0; x < cell; ++x) s += image.at(gy * cell + y, gx * cell + x, c);
        f.push_back(s / (cell * cell));
      }
  Tensor g = to_gray(image);
  std::array<double, 16> hist{};
  double mag_total = 0;
  auto px = [&](int y, int x) {
    return g.at(std::clamp(y, 0, kCropSize - 1), std::clamp(x, 0, kCropSize - 1));
  };
  for (int y = 0; y < kCropSize; ++y)
    for (int x = 0; x < kCropSize; ++x) {
      double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                  (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                  (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      double mag = std::hypot(gx, gy);
      if (mag == 0) continue;
      double ang = std::atan2(gy, gx) + std::numbers::pi;
      int bin = std::min(15, static_cast<int>(ang / (2 * std::numbers::pi) * 16));
      hist[bin] += mag;
      mag_total += mag;
    }
  for (double v : hist) f.push_back(mag_total > 0 ? v / mag_total : 0.0);
  return f;
}

namespace {

Eigen::MatrixXd stack(const std::vector<std::vector<double>>& rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw std::runtime_error("feature extractor returned ragged widths");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace

Eigen::MatrixXd region_stats(const std::vector<Tensor>& images, const std::vector<HandParams>& hands,
                             const FeatureExtractor& extractor) {
  if (images.size() != hands.size()) throw std::invalid_argument("region_stats needs one hand record per image");
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (const SingleHand& h : hands[i].hands) {
      if (h.is_filler()) continue;
      Tensor crop = resize_bilinear(crop_box(images[i], h.box), kCropSize, kCropSize);
      rows.push_back(extractor(crop));
    }
  if (rows.empty()) throw std::invalid_argument("region_stats found no hand crops");
  return stack(rows);
}

Eigen::MatrixXd image_stats(const std::vector<Tensor>& images, const FeatureExtractor& extractor) {
  std::vector<std::vector<double>> rows;
  for (const Tensor& img : images) rows.push_back(extractor(resize_bilinear(img, kCropSize, kCropSize)));
  if (rows.empty()) throw std::invalid_argument("image_stats needs at least one image");
  return stack(rows);
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "paired") return EvalMode::Paired;
  if (s == "unpaired") return EvalMode::Unpaired;
  throw std::invalid_argument("mode must be paired or unpaired, got '" + s + "'");
}

std::string to_string(EvalMode m) { return m == EvalMode::Paired ? "paired" : "unpaired"; }

std::vector<std::string> metric_keys(EvalMode mode) {
  if (mode == EvalMode::Paired) return {"ssim", "mpjpe", "fid", "kid", "fid_h", "kid_h"};
  return {"fid", "kid", "mpjpe", "fid_h", "kid_h"};
}

std::string EvalReport::to_json() const {
  json j = {{"mode", handfit::to_string(mode)}, {"samples", samples}, {"hand_crops", hand_crops}, {"metrics", metrics}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport r;
  r.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  r.samples = j.at("samples");
  r.hand_crops = j.at("hand_crops");
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  return r;
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "mode: " << handfit::to_string(mode) << "  samples: " << samples << "  hand crops: " << hand_crops << "\n";
  for (const std::string& k : metric_keys(mode)) {
    auto it = metrics.find(k);
    if (it == metrics.end()) continue;
    os << std::left << std::setw(8) << k << std::right << std::setw(14) << std::setprecision(6) << std::fixed
       << it->second << "\n";
  }
  return os.str();
}

EvalReport evaluate(const std::vector<Tensor>& generated, const std::vector<SceneSample>& reference, EvalMode mode,
                    const std::vector<std::string>& requested) {
  if (generated.size() != reference.size()) throw std::invalid_argument("generated and reference counts differ");
  if (generated.empty()) throw std::invalid_argument("nothing to evaluate");
  std::vector<std::string> keys = metric_keys(mode);
  if (!requested.empty()) {
    for (const std::string& k : requested)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
        if (k == "ssim") throw std::invalid_argument("ssim needs pixel ground truth and is refused in unpaired mode");
        throw std::invalid_argument("unknown metric '" + k + "'");
      }
    keys = requested;
  }
  auto want = [&](const char* k) { return std::find(keys.begin(), keys.end(), k) != keys.end(); };
  if (mode == EvalMode::Paired)
    for (const SceneSample& s : reference)
      if (!s.has_ground_truth()) throw std::invalid_argument("paired evaluation over samples without ground truth");

  EvalReport r;
  r.mode = mode;
  r.samples = static_cast<int>(generated.size());
  std::vector<Tensor> real;
  std::vector<HandParams> hands;
  for (const SceneSample& s : reference) {
    real.push_back(s.person);
    hands.push_back(s.hands);
  }
  for (std::size_t i = 0; i < generated.size(); ++i) require_same_shape(generated[i], real[i], "evaluate");

  if (want("ssim")) {
    double total = 0;
    for (std::size_t i = 0; i < generated.size(); ++i) total += ssim(generated[i], real[i]);
    r.metrics["ssim"] = total / static_cast<double>(generated.size());
  }
  if (want("mpjpe")) {
    double total = 0;
    int n = 0;
    for (std::size_t i = 0; i < generated.size(); ++i)
      for (const SingleHand& h : hands[i].hands) {
        if (h.is_filler()) continue;
        total += mpjpe_2d(detect_joints(generated[i], h.joints), h.joints);
        ++n;
      }
    r.metrics["mpjpe"] = n ? total / n : 0.0;
  }
  if (want("fid") || want("kid")) {
    Eigen::MatrixXd fg = image_stats(generated), fr = image_stats(real);
    if (want("fid")) r.metrics["fid"] = fid(fit_gaussian(fg), fit_gaussian(fr));
    if (want("kid")) r.metrics["kid"] = kid(fg, fr);
  }
  if (want("fid_h") || want("kid_h")) {
    Eigen::MatrixXd fg = region_stats(generated, hands), fr = region_stats(real, hands);
    r.hand_crops = static_cast<int>(fg.rows());
    if (want("fid_h")) r.metrics["fid_h"] = fid(fit_gaussian(fg), fit_gaussian(fr));
    if (want("kid_h")) r.metrics["kid_h"] = kid(fg, fr);
  }
  return r;
}

}  // namespace handfit
