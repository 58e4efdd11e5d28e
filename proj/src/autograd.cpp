#include "handfit/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace handfit::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;
using MapV = Eigen::Map<Eigen::VectorXd>;

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto& in : inputs)
    if (in && in->requires_grad) rg = true;
  if (rg) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return n;
}

int rows_of(const Shape& s) {
  int r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor& Node::grad_buf() {
  if (grad.empty() && val().size() != 0) grad = Tensor(val().shape(), 0.0);
  return grad;
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

Var variable(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

Var reference(const Tensor& t, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->external = &t;
  n->requires_grad = requires_grad;
  return n;
}

void backward(const Var& root) {
  if (root->val().size() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(root->shape()));
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a->val(), b->val(), "add");
  Tensor out = a->val();
  out += b->val();
  return make(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad_buf() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a->val(), b->val(), "sub");
  Tensor out = a->val();
  const auto& bv = b->val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buf() += self.grad;
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->val(), b->val(), "mul");
  Tensor out = a->val();
  const auto& bv = b->val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->val();
    const auto& bv = self.inputs[1]->val();
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

Var affine(const Var& a, double s, double c) {
  Tensor out = a->val();
  for (auto& x : out.values()) x = s * x + c;
  return make(std::move(out), {a}, [s](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a->val();
  for (auto& x : out.values()) x = x > 0.0 ? x : 0.0;
  return make(std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->val();
    auto& g = self.inputs[0]->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

Var silu(const Var& a) {
  Tensor out = a->val();
  for (auto& x : out.values()) x = x * sigmoid(x);
  return make(std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->val();
    auto& g = self.inputs[0]->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(x[i]);
      g[i] += self.grad[i] * s * (1.0 + x[i] * (1.0 - s));
    }
  });
}

Var add_bias(const Var& x, const Var& b) {
  const auto& xv = x->val();
  const auto& bv = b->val();
  const int c = bv.rank() == 1 ? bv.dim(0) : -1;
  if (xv.rank() == 0 || c != xv.dim(-1))
    throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  Tensor out = xv;
  const std::size_t rows = out.size() / static_cast<std::size_t>(c);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] += bv[j];
  return make(std::move(out), {x, b}, [rows, c](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buf() += self.grad;
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buf();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    }
  });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) { return linear(a, b, nullptr); }

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xv = x->val();
  const auto& wv = w->val();
  if (wv.rank() != 2 || xv.rank() == 0 || xv.dim(-1) != wv.dim(0))
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  const int n = rows_of(xv.shape());
  const int k = wv.dim(0);
  const int m = wv.dim(1);
  if (b && (b->val().rank() != 1 || b->val().dim(0) != m))
    throw ShapeError("linear: bias " + shape_str(b->val().shape()) + " vs width " + std::to_string(m));
  Shape os = xv.shape();
  os.back() = m;
  Tensor out(os);
  MapM(out.data(), n, m).noalias() = CMapM(xv.data(), n, k) * CMapM(wv.data(), k, m);
  if (b) {
    MapM om(out.data(), n, m);
    om.rowwise() += CMapV(b->val().data(), m).transpose();
  }
  return make(std::move(out), {x, w, b}, [n, k, m](Node& self) {
    CMapM g(self.grad.data(), n, m);
    const Var& x = self.inputs[0];
    const Var& w = self.inputs[1];
    const Var& b = self.inputs[2];
    if (x->requires_grad) MapM(x->grad_buf().data(), n, k).noalias() += g * CMapM(w->val().data(), k, m).transpose();
    if (w->requires_grad) MapM(w->grad_buf().data(), k, m).noalias() += CMapM(x->val().data(), n, k).transpose() * g;
    if (b && b->requires_grad) MapV(b->grad_buf().data(), m) += g.colwise().sum().transpose();
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto& xv = x->val();
  const int c = xv.dim(-1);
  if (gamma->val().size() != static_cast<std::size_t>(c) || beta->val().size() != static_cast<std::size_t>(c))
    throw ShapeError("layer_norm: affine width mismatch");
  const int n = rows_of(xv.shape());
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  Tensor out(xv.shape());
  const auto& gv = gamma->val();
  const auto& bv = beta->val();
  for (int r = 0; r < n; ++r) {
    const double* row = xv.data() + static_cast<std::size_t>(r) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[static_cast<std::size_t>(r) * c + j] = h;
      out[static_cast<std::size_t>(r) * c + j] = gv[j] * h + bv[j];
    }
  }
  return make(std::move(out), {x, gamma, beta}, [n, c, xhat, inv_std](Node& self) {
    const Var& x = self.inputs[0];
    const Var& gamma = self.inputs[1];
    const Var& beta = self.inputs[2];
    const auto& gv = gamma->val();
    if (gamma->requires_grad) {
      auto& gg = gamma->grad_buf();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < c; ++j) gg[j] += self.grad[static_cast<std::size_t>(r) * c + j] * (*xhat)[static_cast<std::size_t>(r) * c + j];
    }
    if (beta->requires_grad) {
      auto& gb = beta->grad_buf();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < c; ++j) gb[j] += self.grad[static_cast<std::size_t>(r) * c + j];
    }
    if (x->requires_grad) {
      auto& gx = x->grad_buf();
      std::vector<double> dxh(static_cast<std::size_t>(c));
      for (int r = 0; r < n; ++r) {
        const std::size_t o = static_cast<std::size_t>(r) * c;
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < c; ++j) {
          dxh[j] = self.grad[o + j] * gv[j];
          m1 += dxh[j];
          m2 += dxh[j] * (*xhat)[o + j];
        }
        m1 /= c;
        m2 /= c;
        for (int j = 0; j < c; ++j) gx[o + j] += (*inv_std)[r] * (dxh[j] - m1 - (*xhat)[o + j] * m2);
      }
    }
  });
}

// ---------------------------------------------------------------- spatial

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xv = x->val();
  const auto& wv = w->val();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(0) != wv.dim(1) || wv.dim(2) != xv.dim(2))
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " vs kernel " + shape_str(wv.shape()));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const int h = xv.dim(0), wd = xv.dim(1), cin = xv.dim(2);
  const int k = wv.dim(0), cout = wv.dim(3);
  if (h + 2 * pad < k || wd + 2 * pad < k) throw ShapeError("conv2d: input smaller than kernel");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  const int np = ho * wo;
  const int kc = k * k * cin;
  if (b && (b->val().rank() != 1 || b->val().dim(0) != cout)) throw ShapeError("conv2d: bias width mismatch");

  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  std::shared_ptr<Tensor> cols;
  if (!pointwise) {
    cols = std::make_shared<Tensor>(Shape{np, kc});
    double* cp = cols->data();
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double* row = cp + (static_cast<std::size_t>(oy) * wo + ox) * kc;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            double* dst = row + (ky * k + kx) * cin;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
              std::fill(dst, dst + cin, 0.0);
            } else {
              const double* src = xv.data() + (static_cast<std::size_t>(iy) * wd + ix) * cin;
              std::copy(src, src + cin, dst);
            }
          }
        }
      }
  }
  Tensor out(Shape{ho, wo, cout});
  const double* colp = pointwise ? xv.data() : cols->data();
  MapM(out.data(), np, cout).noalias() = CMapM(colp, np, kc) * CMapM(wv.data(), kc, cout);
  if (b) MapM(out.data(), np, cout).rowwise() += CMapV(b->val().data(), cout).transpose();

  return make(std::move(out), {x, w, b}, [=](Node& self) {
    const Var& x = self.inputs[0];
    const Var& w = self.inputs[1];
    const Var& b = self.inputs[2];
    CMapM g(self.grad.data(), np, cout);
    const double* colp = pointwise ? x->val().data() : cols->data();
    if (w->requires_grad) MapM(w->grad_buf().data(), kc, cout).noalias() += CMapM(colp, np, kc).transpose() * g;
    if (b && b->requires_grad) MapV(b->grad_buf().data(), cout) += g.colwise().sum().transpose();
    if (x->requires_grad) {
      auto& gx = x->grad_buf();
      if (pointwise) {
        MapM(gx.data(), np, kc).noalias() += g * CMapM(w->val().data(), kc, cout).transpose();
      } else {
        RowMat dcols = g * CMapM(w->val().data(), kc, cout).transpose();
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const double* row = dcols.data() + (static_cast<std::size_t>(oy) * wo + ox) * kc;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                double* dst = gx.data() + (static_cast<std::size_t>(iy) * wd + ix) * cin;
                const double* src = row + (ky * k + kx) * cin;
                for (int c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
      }
    }
  });
}

Var upsample2x(const Var& x) {
  const auto& xv = x->val();
  if (xv.rank() != 3) throw ShapeError("upsample2x: expected HWC input");
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor out(Shape{2 * h, 2 * w, c});
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx)
      for (int ch = 0; ch < c; ++ch) out.at(y, xx, ch) = xv.at(y / 2, xx / 2, ch);
  return make(std::move(out), {x}, [h, w, c](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        for (int ch = 0; ch < c; ++ch) g.at(y / 2, xx / 2, ch) += self.grad.at(y, xx, ch);
  });
}

Var avg_pool(const Var& x, int f) {
  const auto& xv = x->val();
  if (xv.rank() != 3 || f < 1 || xv.dim(0) % f || xv.dim(1) % f)
    throw ShapeError("avg_pool: factor " + std::to_string(f) + " does not divide " + shape_str(xv.shape()));
  const int h = xv.dim(0) / f, w = xv.dim(1) / f, c = xv.dim(2);
  const double inv = 1.0 / (f * f);
  Tensor out(Shape{h, w, c});
  for (int y = 0; y < h * f; ++y)
    for (int xx = 0; xx < w * f; ++xx)
      for (int ch = 0; ch < c; ++ch) out.at(y / f, xx / f, ch) += inv * xv.at(y, xx, ch);
  return make(std::move(out), {x}, [h, w, c, f, inv](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (int y = 0; y < h * f; ++y)
      for (int xx = 0; xx < w * f; ++xx)
        for (int ch = 0; ch < c; ++ch) g.at(y, xx, ch) += inv * self.grad.at(y / f, xx / f, ch);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& av = a->val();
  const auto& bv = b->val();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1))
    throw ShapeError("concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const int np = av.dim(0) * av.dim(1), ca = av.dim(2), cb = bv.dim(2);
  Tensor out(Shape{av.dim(0), av.dim(1), ca + cb});
  for (int p = 0; p < np; ++p) {
    std::copy_n(av.data() + static_cast<std::size_t>(p) * ca, ca, out.data() + static_cast<std::size_t>(p) * (ca + cb));
    std::copy_n(bv.data() + static_cast<std::size_t>(p) * cb, cb, out.data() + static_cast<std::size_t>(p) * (ca + cb) + ca);
  }
  return make(std::move(out), {a, b}, [np, ca, cb](Node& self) {
    const std::size_t ct = static_cast<std::size_t>(ca + cb);
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buf();
      for (int p = 0; p < np; ++p)
        for (int c = 0; c < ca; ++c) g[static_cast<std::size_t>(p) * ca + c] += self.grad[p * ct + c];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buf();
      for (int p = 0; p < np; ++p)
        for (int c = 0; c < cb; ++c) g[static_cast<std::size_t>(p) * cb + c] += self.grad[p * ct + ca + c];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0]->shape().begin() + 1, parts[0]->shape().end());
  int rows = 0;
  for (const auto& p : parts) {
    const Shape& s = p->shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail)
      throw ShapeError("concat_rows: " + shape_str(s) + " vs " + shape_str(parts[0]->shape()));
    rows += s[0];
  }
  Shape os = parts[0]->shape();
  os[0] = rows;
  Tensor out(os);
  std::size_t o = 0;
  for (const auto& p : parts) {
    std::copy(p->val().data(), p->val().data() + p->val().size(), out.data() + o);
    o += p->val().size();
  }
  return make(std::move(out), parts, [](Node& self) {
    std::size_t o = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->val().size();
      if (in->requires_grad) {
        auto& g = in->grad_buf();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[o + i];
      }
      o += n;
    }
  });
}

Var gate_rows(const Var& x, const Tensor& gate) {
  const auto& xv = x->val();
  const int n = rows_of(xv.shape());
  if (gate.size() != static_cast<std::size_t>(n))
    throw ShapeError("gate_rows: gate length " + std::to_string(gate.size()) + " vs rows " + std::to_string(n));
  const int c = xv.dim(-1);
  auto gp = std::make_shared<Tensor>(gate);
  Tensor out = xv;
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(r) * c + j] *= gate[r];
  return make(std::move(out), {x}, [n, c, gp](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(r) * c + j] += (*gp)[r] * self.grad[static_cast<std::size_t>(r) * c + j];
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, const Tensor* gate) {
  const auto& qv = q->val();
  const auto& kv = k->val();
  const auto& vv = v->val();
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2) throw ShapeError("attention: expected matrices");
  const int nq = qv.dim(0), d = qv.dim(1), nk = kv.dim(0), dv = vv.dim(1);
  if (nk == 0) throw ShapeError("attention: empty key set");
  if (kv.dim(1) != d || vv.dim(0) != nk)
    throw ShapeError("attention: Q " + shape_str(qv.shape()) + ", K " + shape_str(kv.shape()) + ", V " + shape_str(vv.shape()));
  if (heads < 1 || d % heads || dv % heads) throw ShapeError("attention: heads must divide widths");
  if (gate && gate->size() != static_cast<std::size_t>(nq)) throw ShapeError("attention: gate length mismatch");
  const int dh = d / heads, dvh = dv / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h] is [nq, nk]
  auto probs = std::make_shared<std::vector<RowMat>>(static_cast<std::size_t>(heads));
  auto gp = gate ? std::make_shared<Tensor>(*gate) : nullptr;
  Tensor out(Shape{nq, dv});
  Eigen::OuterStride<> qs(d), vs(dv);
  using SubC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
  using Sub = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
  for (int hd = 0; hd < heads; ++hd) {
    SubC qh(qv.data() + hd * dh, nq, dh, qs);
    SubC kh(kv.data() + hd * dh, nk, dh, qs);
    SubC vh(vv.data() + hd * dvh, nk, dvh, vs);
    RowMat s = (qh * kh.transpose()) * sc;
    for (int i = 0; i < nq; ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    Sub oh(out.data() + hd * dvh, nq, dvh, vs);
    oh.noalias() = s * vh;
    (*probs)[hd] = std::move(s);
  }
  if (gp)
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < dv; ++j) out.at(i, j) *= (*gp)[i];

  return make(std::move(out), {q, k, v}, [=](Node& self) {
    const Var& q = self.inputs[0];
    const Var& k = self.inputs[1];
    const Var& v = self.inputs[2];
    Tensor go = self.grad;
    if (gp)
      for (int i = 0; i < nq; ++i)
        for (int j = 0; j < dv; ++j) go.at(i, j) *= (*gp)[i];
    Eigen::OuterStride<> qs(d), vs(dv);
    for (int hd = 0; hd < heads; ++hd) {
      const RowMat& p = (*probs)[hd];
      SubC goh(go.data() + hd * dvh, nq, dvh, vs);
      SubC vh(v->val().data() + hd * dvh, nk, dvh, vs);
      SubC qh(q->val().data() + hd * dh, nq, dh, qs);
      SubC kh(k->val().data() + hd * dh, nk, dh, qs);
      if (v->requires_grad) {
        Sub gvh(v->grad_buf().data() + hd * dvh, nk, dvh, vs);
        gvh.noalias() += p.transpose() * goh;
      }
      if (!q->requires_grad && !k->requires_grad) continue;
      RowMat dp = goh * vh.transpose();
      RowMat ds = p.cwiseProduct(dp);
      Eigen::VectorXd rs = ds.rowwise().sum();
      ds -= p.cwiseProduct(rs.replicate(1, nk));
      ds *= sc;
      if (q->requires_grad) {
        Sub gqh(q->grad_buf().data() + hd * dh, nq, dh, qs);
        gqh.noalias() += ds * kh;
      }
      if (k->requires_grad) {
        Sub gkh(k->grad_buf().data() + hd * dh, nk, dh, qs);
        gkh.noalias() += ds.transpose() * qh;
      }
    }
  });
}

// ---------------------------------------------------------------- shape & reductions

Var reshape(const Var& x, Shape s) {
  Tensor out = x->val().reshaped(std::move(s));
  return make(std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape) {
  if (shape_numel(out_shape) != index->size()) throw ShapeError("gather: index length vs output shape");
  const auto& xv = x->val();
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::size_t src = (*index)[i];
    if (src >= xv.size()) throw ShapeError("gather: index out of range");
    out[i] = xv[src];
  }
  return make(std::move(out), {x}, [index](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->val().values()) s += v;
  return make(Tensor(Shape{1}, s), {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a->val().size());
  return scale(sum(a), 1.0 / n);
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a->val(), b->val(), "mse");
  const auto& av = a->val();
  const auto& bv = b->val();
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return make(Tensor(Shape{1}, s / n), {a, b}, [n](Node& self) {
    const auto& av = self.inputs[0]->val();
    const auto& bv = self.inputs[1]->val();
    const double g0 = self.grad[0] * 2.0 / n;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * (av[i] - bv[i]);
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= g0 * (av[i] - bv[i]);
    }
  });
}

// ---------------------------------------------------------------- edge helpers

Var filter2d_replicate(const Var& x, const Tensor& kernel) {
  const auto& xv = x->val();
  if (xv.rank() != 2) throw ShapeError("filter2d_replicate: expected [H, W] input");
  if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0)
    throw ShapeError("filter2d_replicate: kernel must be square with odd size");
  const int h = xv.dim(0), w = xv.dim(1), ks = kernel.dim(0), r = ks / 2;
  auto kp = std::make_shared<Tensor>(kernel);
  Tensor out(Shape{h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0.0;
      for (int a = 0; a < ks; ++a) {
        const int yy = std::clamp(i + a - r, 0, h - 1);
        for (int b = 0; b < ks; ++b) s += kernel.at(a, b) * xv.at(yy, std::clamp(j + b - r, 0, w - 1));
      }
      out.at(i, j) = s;
    }
  return make(std::move(out), {x}, [h, w, ks, r, kp](Node& self) {
    auto& g = self.inputs[0]->grad_buf();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double gij = self.grad.at(i, j);
        if (gij == 0.0) continue;
        for (int a = 0; a < ks; ++a) {
          const int yy = std::clamp(i + a - r, 0, h - 1);
          for (int b = 0; b < ks; ++b) g.at(yy, std::clamp(j + b - r, 0, w - 1)) += kp->at(a, b) * gij;
        }
      }
  });
}

Var smooth_magnitude(const Var& gx, const Var& gy, double delta) {
  require_same_shape(gx->val(), gy->val(), "smooth_magnitude");
  const auto& xv = gx->val();
  const auto& yv = gy->val();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(xv[i] * xv[i] + yv[i] * yv[i] + delta * delta) - delta;
  return make(std::move(out), {gx, gy}, [delta](Node& self) {
    const auto& xv = self.inputs[0]->val();
    const auto& yv = self.inputs[1]->val();
    for (int which = 0; which < 2; ++which) {
      if (!self.inputs[which]->requires_grad) continue;
      const auto& num = which == 0 ? xv : yv;
      auto& g = self.inputs[which]->grad_buf();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double den = std::sqrt(xv[i] * xv[i] + yv[i] * yv[i] + delta * delta);
        g[i] += self.grad[i] * num[i] / den;
      }
    }
  });
}

Var normalize_by_max(const Var& x, double eps) {
  const auto& xv = x->val();
  if (xv.size() == 0) throw ShapeError("normalize_by_max: empty input");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (xv[i] > xv[arg]) arg = i;
  const double den = xv[arg] + eps;
  Tensor out = xv;
  out *= 1.0 / den;
  return make(std::move(out), {x}, [arg, den](Node& self) {
    const auto& xv = self.inputs[0]->val();
    auto& g = self.inputs[0]->grad_buf();
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] / den;
      dot += self.grad[i] * xv[i];
    }
    g[arg] -= dot / (den * den);
  });
}

Var straight_through(Tensor forward_value, const Var& surrogate) {
  require_same_shape(forward_value, surrogate->val(), "straight_through");
  return make(std::move(forward_value), {surrogate}, [](Node& self) { self.inputs[0]->grad_buf() += self.grad; });
}

}  // namespace handfit::ag
