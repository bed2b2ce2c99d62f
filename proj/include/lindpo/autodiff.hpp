// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "lindpo/errors.hpp"

// Minimal vector-valued reverse-mode autodiff. A Tape records nodes in creation
// order; backward() walks them in reverse. Nodes hold dense vectors, and the only
// matrix op is the affine layer, which is all a small MLP needs.
namespace lindpo::ad {

struct Var {
  std::size_t id;
};

class Tape {
 public:
  /// Differentiable input (model parameters).
  Var leaf(std::vector<double> value) { return push(Op::Leaf, std::move(value), {}, true); }

  /// Input that never needs a gradient (data, targets, frozen quantities).
  Var constant(std::vector<double> value) { return push(Op::Constant, std::move(value), {}, false); }
  Var constant(double value) { return constant(std::vector<double>{value}); }

  /// y = W·x + b with W stored row-major, rows = b.size(), cols = x.size().
  Var affine(Var w, Var b, Var x) {
    const auto& W = value(w);
    const auto& B = value(b);
    const auto& X = value(x);
    const std::size_t rows = B.size(), cols = X.size();
    if (W.size() != rows * cols) throw ShapeError("affine: weight size does not match bias and input");
    std::vector<double> y(B);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* wr = W.data() + r * cols;
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * X[c];
      y[r] += acc;
    }
    Var out = push(Op::Affine, std::move(y), {w.id, b.id, x.id}, any_grad(w, b, x));
    nodes_[out.id].cols = cols;
    return out;
  }

  Var tanh(Var x) {
    std::vector<double> y(value(x));
    for (double& v : y) v = std::tanh(v);
    return unary(Op::Tanh, std::move(y), x);
  }

  Var silu(Var x) {
    std::vector<double> y(value(x));
    for (double& v : y) v = v / (1.0 + std::exp(-v));
    return unary(Op::Silu, std::move(y), x);
  }

  /// Elementwise log(1 + e^x), evaluated stably.
  Var softplus(Var x) {
    std::vector<double> y(value(x));
    for (double& v : y) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    return unary(Op::Softplus, std::move(y), x);
  }

  Var add(Var a, Var b) { return binary(Op::Add, a, b, +1.0); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b, -1.0); }

  Var scale(Var x, double k) {
    std::vector<double> y(value(x));
    for (double& v : y) v *= k;
    Var out = unary(Op::Scale, std::move(y), x);
    nodes_[out.id].scalar = k;
    return out;
  }

  /// Scalar ||x||².
  Var squared_norm(Var x) {
    double s = 0.0;
    for (double v : value(x)) s += v * v;
    return unary(Op::SquaredNorm, {s}, x);
  }

  /// (1/n)·Σ terms, all of equal size; summed in order for reproducibility.
  Var mean(std::span<const Var> terms) {
    if (terms.empty()) throw ContractError("mean of an empty list");
    const std::size_t n = value(terms[0]).size();
    std::vector<double> y(n, 0.0);
    bool grad = false;
    std::vector<std::size_t> ids;
    ids.reserve(terms.size());
    for (Var t : terms) {
      const auto& v = value(t);
      if (v.size() != n) throw ShapeError("mean: terms differ in size");
      for (std::size_t i = 0; i < n; ++i) y[i] += v[i];
      grad = grad || nodes_[t.id].requires_grad;
      ids.push_back(t.id);
    }
    const double inv = 1.0 / static_cast<double>(terms.size());
    for (double& v : y) v *= inv;
    Var out = push(Op::Mean, std::move(y), {}, grad);
    nodes_[out.id].scalar = inv;
    nodes_[out.id].many = std::move(ids);
    return out;
  }

  const std::vector<double>& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const {
    const auto& x = value(v);
    if (x.size() != 1) throw ContractError("expected a scalar node");
    return x[0];
  }
  const std::vector<double>& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Accumulates d(root)/d(node) into every node that requires a gradient.
  void backward(Var root) {
    if (nodes_.at(root.id).value.size() != 1) throw ContractError("backward: loss is not a scalar");
    for (auto& n : nodes_) n.grad.assign(n.requires_grad ? n.value.size() : 0, 0.0);
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) propagate(i);
  }

 private:
  enum class Op { Leaf, Constant, Affine, Tanh, Silu, Softplus, Add, Sub, Scale, SquaredNorm, Mean };

  struct Node {
    Op op;
    std::vector<double> value;
    std::vector<double> grad;
    std::size_t in[3];
    std::size_t n_in;
    bool requires_grad;
    double scalar = 0.0;
    std::size_t cols = 0;
    std::vector<std::size_t> many;
  };

  Var push(Op op, std::vector<double> value, std::initializer_list<std::size_t> in, bool requires_grad) {
    Node n{op, std::move(value), {}, {0, 0, 0}, in.size(), requires_grad, 0.0, 0, {}};
    std::size_t k = 0;
    for (std::size_t id : in) n.in[k++] = id;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool any_grad(Var a, Var b, Var c) const {
    return nodes_[a.id].requires_grad || nodes_[b.id].requires_grad || nodes_[c.id].requires_grad;
  }

  Var unary(Op op, std::vector<double> y, Var x) { return push(op, std::move(y), {x.id}, nodes_[x.id].requires_grad); }

  Var binary(Op op, Var a, Var b, double sign) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.size() != B.size()) throw ShapeError("elementwise op on vectors of different size");
    std::vector<double> y(A);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sign * B[i];
    return push(op, std::move(y), {a.id, b.id}, nodes_[a.id].requires_grad || nodes_[b.id].requires_grad);
  }

  void accumulate(std::size_t id, std::size_t i, double g) {
    Node& n = nodes_[id];
    if (n.requires_grad) n.grad[i] += g;
  }

  void propagate(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant: return;
      case Op::Affine: {
        Node& W = nodes_[n.in[0]];
        Node& B = nodes_[n.in[1]];
        Node& X = nodes_[n.in[2]];
        const std::size_t rows = g.size(), cols = n.cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const double gr = g[r];
          if (B.requires_grad) B.grad[r] += gr;
          if (W.requires_grad) {
            double* wg = W.grad.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) wg[c] += gr * X.value[c];
          }
          if (X.requires_grad) {
            const double* wr = W.value.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) X.grad[c] += gr * wr[c];
          }
        }
        return;
      }
      case Op::Tanh:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(n.in[0], i, g[i] * (1.0 - n.value[i] * n.value[i]));
        return;
      case Op::Silu: {
        const auto& x = nodes_[n.in[0]].value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-x[i]));
          accumulate(n.in[0], i, g[i] * s * (1.0 + x[i] * (1.0 - s)));
        }
        return;
      }
      case Op::Softplus: {
        const auto& x = nodes_[n.in[0]].value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
          accumulate(n.in[0], i, g[i] * s);
        }
        return;
      }
      case Op::Add:
      case Op::Sub: {
        const double sign = n.op == Op::Add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          accumulate(n.in[0], i, g[i]);
          accumulate(n.in[1], i, sign * g[i]);
        }
        return;
      }
      case Op::Scale:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(n.in[0], i, g[i] * n.scalar);
        return;
      case Op::SquaredNorm: {
        const auto& x = nodes_[n.in[0]].value;
        for (std::size_t i = 0; i < x.size(); ++i) accumulate(n.in[0], i, 2.0 * x[i] * g[0]);
        return;
      }
      case Op::Mean:
        for (std::size_t id_in : n.many)
          for (std::size_t i = 0; i < g.size(); ++i) accumulate(id_in, i, g[i] * n.scalar);
        return;
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace lindpo::ad
