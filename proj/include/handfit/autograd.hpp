#pragma once

// Minimal reverse-mode automatic differentiation over handfit::Tensor.
//
// A graph is built eagerly by calling the ops below; backward() walks it in
// reverse topological order. Nodes that do not depend on any leaf requiring
// gradients carry no backward closure, so frozen sub-networks cost only
// their forward pass.

#include <functional>
#include <memory>
#include <vector>

#include "handfit/tensor.hpp"

namespace handfit::ag {

struct Node {
  Tensor value;
  const Tensor* external = nullptr;  // set for leaves that alias parameter storage
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  const Tensor& val() const { return external ? *external : value; }
  const Shape& shape() const { return val().shape(); }
  Tensor& grad_buf();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor t);
Var variable(Tensor t);
/// Leaf aliasing `t`; the tensor must outlive the graph.
Var reference(const Tensor& t, bool requires_grad);

/// Accumulates d(root)/d(node) into every node's grad. root must be a scalar.
void backward(const Var& root);

// Elementwise, same shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// s * a + c elementwise.
Var affine(const Var& a, double s, double c);
Var relu(const Var& a);
Var silu(const Var& a);

/// Adds vector b (length C) along the last dimension of x.
Var add_bias(const Var& x, const Var& b);

/// Treats x as [N, K] (leading dims flattened) and returns x W (+ b).
Var linear(const Var& x, const Var& w, const Var& b);
Var matmul(const Var& a, const Var& b);

/// Row-wise layer normalization over the last dimension with affine.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// x: [H, W, Cin], w: [k, k, Cin, Cout], b: [Cout] or null. Zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample2x(const Var& x);
Var avg_pool(const Var& x, int factor);
Var concat_channels(const Var& a, const Var& b);
/// Concatenates along the first axis; trailing extents must agree.
Var concat_rows(const std::vector<Var>& parts);

/// Multiplies row i of x (leading dims flattened) by gate[i].
Var gate_rows(const Var& x, const Tensor& gate);

/// Multi-head scaled dot-product attention, q: [Nq, d], k: [Nk, d],
/// v: [Nk, dv]. If gate is non-null, output row i is scaled by gate[i].
Var attention(const Var& q, const Var& k, const Var& v, int heads, const Tensor* gate);

Var reshape(const Var& x, Shape s);
/// out[i] = x[index[i]]; backward scatters.
Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape);

Var sum(const Var& a);
Var mean(const Var& a);
/// Mean squared difference.
Var mse(const Var& a, const Var& b);

/// 2-D correlation of x [H, W] with a fixed odd kernel, clamped borders.
Var filter2d_replicate(const Var& x, const Tensor& kernel);
/// sqrt(gx^2 + gy^2 + delta^2) - delta, smooth everywhere and zero at rest.
Var smooth_magnitude(const Var& gx, const Var& gy, double delta);
/// x / (max(x) + eps).
Var normalize_by_max(const Var& x, double eps);
/// Value is `forward_value`; gradient flows to `surrogate` unchanged.
Var straight_through(Tensor forward_value, const Var& surrogate);

}  // namespace handfit::ag
