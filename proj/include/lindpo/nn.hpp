// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lindpo/autodiff.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/rng.hpp"

namespace lindpo {

enum class Activation { Tanh, SiLU };

/// Raw: the scalar t. Fourier: (t, sin 2πt, cos 2πt).
enum class TimeEmbedding { Raw, Fourier };

inline std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }
inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "silu") return Activation::SiLU;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}
inline std::string_view to_string(TimeEmbedding e) { return e == TimeEmbedding::Raw ? "raw" : "fourier"; }
inline TimeEmbedding parse_time_embedding(std::string_view s) {
  if (s == "raw") return TimeEmbedding::Raw;
  if (s == "fourier") return TimeEmbedding::Fourier;
  throw ConfigError("unknown time embedding '" + std::string(s) + "'");
}
inline std::size_t time_feature_count(TimeEmbedding e) { return e == TimeEmbedding::Raw ? 1 : 3; }

/// Fully connected regressor y(x_t, t, c). The input layer sees the concatenation
/// (x_t, time features, c); the output has the data dimension. Parameters are
/// stored flat, layer by layer, weight (row-major, out × in) then bias.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::SiLU;
  TimeEmbedding time_embedding = TimeEmbedding::Fourier;
  std::uint64_t seed = 0;
  std::vector<double> params;

  std::size_t num_layers() const noexcept { return layer_dims.size() - 1; }
  std::size_t data_dim() const noexcept { return layer_dims.back(); }
  std::size_t cond_dim() const noexcept {
    return layer_dims.front() - data_dim() - time_feature_count(time_embedding);
  }
  std::size_t param_count() const noexcept { return params.size(); }

  std::size_t weight_offset(std::size_t layer) const noexcept {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += (layer_dims[l] + 1) * layer_dims[l + 1];
    return off;
  }
  std::span<const double> weight(std::size_t layer) const {
    return {params.data() + weight_offset(layer), layer_dims[layer] * layer_dims[layer + 1]};
  }
  std::span<double> weight(std::size_t layer) {
    return {params.data() + weight_offset(layer), layer_dims[layer] * layer_dims[layer + 1]};
  }
  std::span<const double> bias(std::size_t layer) const {
    return {params.data() + weight_offset(layer) + layer_dims[layer] * layer_dims[layer + 1], layer_dims[layer + 1]};
  }
  std::span<double> bias(std::size_t layer) {
    return {params.data() + weight_offset(layer) + layer_dims[layer] * layer_dims[layer + 1], layer_dims[layer + 1]};
  }

  bool same_architecture(const MlpModel& o) const noexcept {
    return layer_dims == o.layer_dims && activation == o.activation && time_embedding == o.time_embedding &&
           params.size() == o.params.size();
  }
};

inline std::size_t param_count_for(std::span<const std::size_t> dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += (dims[l] + 1) * dims[l + 1];
  return n;
}

inline void validate_dims(std::span<const std::size_t> dims, TimeEmbedding emb) {
  if (dims.size() < 2) throw ConfigError("an MLP needs at least an input and an output layer");
  for (std::size_t d : dims)
    if (d == 0) throw ConfigError("layer dimensions must be positive");
  if (dims.front() < dims.back() + time_feature_count(emb))
    throw ConfigError("input layer too small for data dimension plus time features");
}

/// Weights ~ U(-1/√fan_in, 1/√fan_in), biases zero.
inline MlpModel mlp_init(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed,
                         TimeEmbedding time_embedding = TimeEmbedding::Fourier) {
  validate_dims(layer_dims, time_embedding);
  MlpModel m{std::move(layer_dims), activation, time_embedding, seed, {}};
  m.params.assign(param_count_for(m.layer_dims), 0.0);
  Rng rng{seed, stream::kInit};
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.layer_dims[l]));
    for (double& w : m.weight(l)) w = rng.uniform(-bound, bound);
  }
  return m;
}

/// Builds the input vector (x_t, time features, c).
inline std::vector<double> mlp_input(const MlpModel& model, std::span<const double> x_t, double t,
                                     std::span<const double> c) {
  if (x_t.size() != model.data_dim()) throw ShapeError("mlp: x_t has the wrong dimension");
  if (c.size() != model.cond_dim()) throw ShapeError("mlp: condition has the wrong dimension");
  std::vector<double> in;
  in.reserve(model.layer_dims.front());
  in.insert(in.end(), x_t.begin(), x_t.end());
  in.push_back(t);
  if (model.time_embedding == TimeEmbedding::Fourier) {
    in.push_back(std::sin(2.0 * std::numbers::pi * t));
    in.push_back(std::cos(2.0 * std::numbers::pi * t));
  }
  in.insert(in.end(), c.begin(), c.end());
  return in;
}

inline double activate(Activation a, double x) {
  return a == Activation::Tanh ? std::tanh(x) : x / (1.0 + std::exp(-x));
}

/// Plain forward pass (no tape).
inline std::vector<double> mlp_forward(const MlpModel& model, std::span<const double> x_t, double t,
                                       std::span<const double> c) {
  std::vector<double> h = mlp_input(model, x_t, t, c);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const std::size_t in = model.layer_dims[l], out = model.layer_dims[l + 1];
    const auto W = model.weight(l);
    const auto b = model.bias(l);
    std::vector<double> z(b.begin(), b.end());
    for (std::size_t r = 0; r < out; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += W[r * in + k] * h[k];
      z[r] += acc;
    }
    if (l + 1 < model.num_layers())
      for (double& v : z) v = activate(model.activation, v);
    h = std::move(z);
  }
  return h;
}

/// A model's parameters registered as tape leaves.
struct MlpVars {
  const MlpModel* model;
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

inline MlpVars bind(ad::Tape& tape, const MlpModel& model) {
  MlpVars vars{&model, {}, {}};
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const auto w = model.weight(l);
    const auto b = model.bias(l);
    vars.weights.push_back(tape.leaf({w.begin(), w.end()}));
    vars.biases.push_back(tape.leaf({b.begin(), b.end()}));
  }
  return vars;
}

/// Forward pass recorded on a tape.
inline ad::Var mlp_forward(ad::Tape& tape, const MlpVars& vars, std::span<const double> x_t, double t,
                           std::span<const double> c) {
  const MlpModel& model = *vars.model;
  ad::Var h = tape.constant(mlp_input(model, x_t, t, c));
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    h = tape.affine(vars.weights[l], vars.biases[l], h);
    if (l + 1 < model.num_layers()) h = model.activation == Activation::Tanh ? tape.tanh(h) : tape.silu(h);
  }
  return h;
}

/// Flat gradient in the model's parameter order.
inline std::vector<double> gather_grad(const ad::Tape& tape, const MlpVars& vars) {
  std::vector<double> g;
  g.reserve(vars.model->param_count());
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    const auto& gw = tape.grad(vars.weights[l]);
    const auto& gb = tape.grad(vars.biases[l]);
    g.insert(g.end(), gw.begin(), gw.end());
    g.insert(g.end(), gb.begin(), gb.end());
  }
  return g;
}

struct GradResult {
  double loss;
  std::vector<double> grad;
};

/// Reverse-mode gradient of a scalar loss built on the tape by
/// `closure(ad::Tape&, const MlpVars&) -> ad::Var`.
template <class Closure>
GradResult grad_loss(const MlpModel& model, Closure&& closure) {
  ad::Tape tape;
  const MlpVars vars = bind(tape, model);
  const ad::Var loss = closure(tape, vars);
  tape.backward(loss);
  return {tape.scalar(loss), gather_grad(tape, vars)};
}

/// Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / 2h for every coordinate.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                            std::span<const double> params, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
  std::vector<double> theta(params.begin(), params.end());
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    const double up = loss(theta);
    theta[i] = orig - h;
    const double down = loss(theta);
    theta[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Copy of `model` with its parameters replaced.
inline MlpModel with_params(const MlpModel& model, std::span<const double> params) {
  if (params.size() != model.param_count()) throw ShapeError("with_params: parameter count mismatch");
  MlpModel m = model;
  m.params.assign(params.begin(), params.end());
  return m;
}

struct AdamHparams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam moments plus hyperparameters; the update decouples weight decay from the gradient.
struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;
  AdamHparams hp;
};

inline OptimizerState make_optimizer(std::size_t param_count, const AdamHparams& hp = {}) {
  return {std::vector<double>(param_count, 0.0), std::vector<double>(param_count, 0.0), 0, hp};
}

/// One AdamW step. `lr_scale` multiplies the learning rate (warmup).
inline void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& st,
                           double lr_scale = 1.0) {
  if (grads.size() != params.size() || st.first_moment.size() != params.size() ||
      st.second_moment.size() != params.size())
    throw ContractError("optimizer_step: parameter, gradient and moment shapes differ");
  const AdamHparams& hp = st.hp;
  ++st.step_count;
  const double lr = hp.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(st.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = st.first_moment[i];
    double& v = st.second_moment[i];
    m = hp.beta1 * m + (1.0 - hp.beta1) * grads[i];
    v = hp.beta2 * v + (1.0 - hp.beta2) * grads[i] * grads[i];
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    params[i] -= lr * hp.weight_decay * params[i];
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

}  // namespace lindpo
