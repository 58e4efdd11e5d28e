#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/nn.hpp"
#include "handfit/tensor.hpp"

namespace handfit::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline Tensor gaussian_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

struct GradCheck {
  double max_rel = 0;
  std::size_t checked = 0;
};

// Per-coordinate |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares d f / d inputs[i] from backward() against central differences.
// `f` builds the graph from leaf variables; at most `per_input` coordinates
// of each input are probed (evenly strided).
inline GradCheck check_gradients(const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
                                 std::vector<Tensor> inputs, double h = 1e-5, std::size_t per_input = 64) {
  std::vector<ag::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(ag::variable(t));
  const ag::Var out = f(leaves);
  ag::backward(out);

  auto eval = [&](const std::vector<Tensor>& xs) {
    std::vector<ag::Var> cs;
    for (const Tensor& t : xs) cs.push_back(ag::constant(t));
    return f(cs)->val()[0];
  };

  GradCheck r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = leaves[i]->grad.empty() ? Tensor(inputs[i].shape()) : leaves[i]->grad;
    const std::size_t n = inputs[i].size();
    const std::size_t stride = std::max<std::size_t>(1, n / per_input);
    for (std::size_t j = 0; j < n; j += stride) {
      const double x = inputs[i][j];
      inputs[i][j] = x + h;
      const double fp = eval(inputs);
      inputs[i][j] = x - h;
      const double fm = eval(inputs);
      inputs[i][j] = x;
      const double numeric = (fp - fm) / (2 * h);
      r.max_rel = std::max(r.max_rel, rel_error(analytic[j], numeric));
      ++r.checked;
    }
  }
  return r;
}

// Same check for parameters bound through a Binder. `f` must read every
// parameter through the binder it is given.
inline GradCheck check_param_gradients(ParameterStore& store, const std::function<ag::Var(Binder&)>& f,
                                       const std::vector<std::string>& names, double h = 1e-5,
                                       std::size_t per_param = 16) {
  std::map<std::string, Tensor> grads;
  {
    Binder b(store, [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); });
    ag::backward(f(b));
    grads = b.gradients();
  }
  auto eval = [&] {
    Binder b(store);
    return f(b)->val()[0];
  };
  GradCheck r;
  for (const std::string& name : names) {
    Tensor& p = store.get(name);
    const Tensor& g = grads.at(name);
    const std::size_t stride = std::max<std::size_t>(1, p.size() / per_param);
    for (std::size_t j = 0; j < p.size(); j += stride) {
      const double x = p[j];
      p[j] = x + h;
      const double fp = eval();
      p[j] = x - h;
      const double fm = eval();
      p[j] = x;
      r.max_rel = std::max(r.max_rel, rel_error(g[j], (fp - fm) / (2 * h)));
      ++r.checked;
    }
  }
  return r;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("handfit_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace handfit::testing

namespace handfit {

// Readable gtest failure output for tensors.
inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << "Tensor" << shape_str(t.shape()) << " {";
  const std::size_t n = std::min<std::size_t>(t.size(), 8);
  for (std::size_t i = 0; i < n; ++i) *os << (i ? ", " : "") << t[i];
  if (t.size() > n) *os << ", ...";
  *os << "}";
}

}  // namespace handfit
