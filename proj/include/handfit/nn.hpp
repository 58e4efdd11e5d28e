#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "handfit/autograd.hpp"
#include "handfit/tensor.hpp"

namespace handfit {

/// Named parameter tensors, ordered by key.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  std::vector<std::string> keys() const;
  std::size_t parameter_count() const;
  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

/// Hands out graph leaves for parameters during one forward pass. Leaves
/// are created once per name and alias the store, so the store must
/// outlive the binder and must not be mutated while a graph is alive.
class Binder {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  explicit Binder(const ParameterStore& store, Predicate trainable = {});

  ag::Var operator()(const std::string& name);
  bool has(const std::string& name) const { return store_.contains(name); }

  /// Gradients of trainable leaves touched by the graph (zeros if unreached).
  std::map<std::string, Tensor> gradients() const;

 private:
  const ParameterStore& store_;
  Predicate trainable_;
  std::unordered_map<std::string, ag::Var> leaves_;
};

namespace nn {

/// Per-parameter deterministic RNG: the stream depends only on (seed, name),
/// so adding unrelated modules never changes existing initial values.
std::uint64_t name_seed(std::uint64_t seed, const std::string& name);

void init_linear(ParameterStore& s, const std::string& prefix, int in, int out, std::uint64_t seed, bool bias = true);
void init_conv(ParameterStore& s, const std::string& prefix, int k, int cin, int cout, std::uint64_t seed, bool zero = false);
void init_layer_norm(ParameterStore& s, const std::string& prefix, int width);
void init_tensor_uniform(ParameterStore& s, const std::string& name, Shape shape, double bound, std::uint64_t seed);

ag::Var linear(Binder& b, const std::string& prefix, const ag::Var& x);
ag::Var conv(Binder& b, const std::string& prefix, const ag::Var& x, int stride = 1);
ag::Var layer_norm(Binder& b, const std::string& prefix, const ag::Var& x);

/// Sinusoidal embedding of an integer timestep, [1, width].
Tensor timestep_embedding(int t, int width);

}  // namespace nn

}  // namespace handfit
