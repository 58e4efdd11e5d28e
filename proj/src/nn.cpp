#include "handfit/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace handfit {

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw std::logic_error("duplicate parameter " + name);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter " + name);
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::keys() const {
  std::vector<std::string> k;
  k.reserve(params_.size());
  for (const auto& [n, _] : params_) k.push_back(n);
  return k;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

Binder::Binder(const ParameterStore& store, Predicate trainable) : store_(store), trainable_(std::move(trainable)) {}

ag::Var Binder::operator()(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const Tensor& t = store_.get(name);
  auto v = ag::reference(t, trainable_ && trainable_(name));
  leaves_.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> Binder::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : leaves_) {
    if (!v->requires_grad) continue;
    out.emplace(name, v->grad.empty() ? Tensor(v->shape(), 0.0) : v->grad);
  }
  return out;
}

namespace nn {

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void init_tensor_uniform(ParameterStore& s, const std::string& name, Shape shape, double bound, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(name_seed(seed, name));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& x : t.values()) x = u(rng);
  s.add(name, std::move(t));
}

void init_linear(ParameterStore& s, const std::string& prefix, int in, int out, std::uint64_t seed, bool bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  init_tensor_uniform(s, prefix + ".w", {in, out}, bound, seed);
  if (bias) init_tensor_uniform(s, prefix + ".b", {out}, bound, seed);
}

void init_conv(ParameterStore& s, const std::string& prefix, int k, int cin, int cout, std::uint64_t seed, bool zero) {
  if (zero) {
    s.add(prefix + ".w", Tensor({k, k, cin, cout}, 0.0));
    s.add(prefix + ".b", Tensor({cout}, 0.0));
    return;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * cin));
  init_tensor_uniform(s, prefix + ".w", {k, k, cin, cout}, bound, seed);
  init_tensor_uniform(s, prefix + ".b", {cout}, bound, seed);
}

void init_layer_norm(ParameterStore& s, const std::string& prefix, int width) {
  s.add(prefix + ".g", Tensor({width}, 1.0));
  s.add(prefix + ".b", Tensor({width}, 0.0));
}

ag::Var linear(Binder& b, const std::string& prefix, const ag::Var& x) {
  const std::string bias = prefix + ".b";
  return ag::linear(x, b(prefix + ".w"), b.has(bias) ? b(bias) : nullptr);
}

ag::Var conv(Binder& b, const std::string& prefix, const ag::Var& x, int stride) {
  const auto w = b(prefix + ".w");
  const int k = w->shape()[0];
  return ag::conv2d(x, w, b(prefix + ".b"), stride, k / 2);
}

ag::Var layer_norm(Binder& b, const std::string& prefix, const ag::Var& x) {
  return ag::layer_norm(x, b(prefix + ".g"), b(prefix + ".b"), 1e-5);
}

Tensor timestep_embedding(int t, int width) {
  Tensor e({1, width});
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

}  // namespace nn

}  // namespace handfit
