// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lindpo/dynamics.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/objectives.hpp"
#include "lindpo/rng.hpp"
#include "lindpo/schedules.hpp"
#include "lindpo/training.hpp"

namespace lindpo::verify {

struct CheckResult {
  bool passed = false;
  std::string detail;
};

/// Signature of dpo_gradient_weight; swappable so a mutated weight can be fed
/// to the gradient-identity check.
using WeightFn = std::function<double(double delta, double beta_bar)>;

struct Options {
  WeightFn dpo_weight = dpo_gradient_weight;
};

struct Check {
  std::string name;
  std::function<CheckResult(const Options&)> run;
};

struct Outcome {
  std::string name;
  CheckResult result;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Shared helpers

/// ‖a − b‖∞ / max(‖b‖∞, floor).
inline double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
  double num = 0.0, den = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

inline std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

/// RF marginal of x0 ~ N(0, s²) in one dimension.
struct GaussianRf {
  double s;
  double variance(double t) const { return (1.0 - t) * (1.0 - t) * s * s + t * t; }
  /// E[x1 − x0 | x_t = x].
  double velocity(double x, double t) const { return (t - (1.0 - t) * s * s) / variance(t) * x; }
  double score(double x, double t) const { return -x / variance(t); }
};

/// Small MLP fixture with a one-dimensional condition and raw time input.
struct GradFixture {
  MlpModel policy;
  MlpModel ref;
  std::vector<PreferencePair> batch;
  std::vector<NoiseDraw> draws;
};

inline GradFixture make_grad_fixture(std::uint64_t seed, std::size_t batch_size = 2) {
  static const std::vector<std::vector<std::size_t>> dims{{4, 8, 2}, {4, 16, 2}, {4, 16, 16, 2}, {4, 8, 8, 2}};
  const auto& d = dims[seed % dims.size()];
  const Activation act = seed % 2 == 0 ? Activation::Tanh : Activation::SiLU;
  GradFixture f;
  f.policy = mlp_init(d, act, derive_key({seed, 1}), TimeEmbedding::Raw);
  f.ref = f.policy;
  Rng rng{seed, stream::kVerify, 2};
  for (double& p : f.ref.params) p += 0.02 * rng.normal();
  const Schedule rf = Schedule::rf();
  DpoConfig cfg;
  for (std::size_t i = 0; i < batch_size; ++i) {
    f.batch.push_back({rng.normal_vector(2), rng.normal_vector(2), {rng.uniform()}});
    f.draws.push_back({rf.clamp(rng.uniform(0.05, 0.95)), rng.normal_vector(2), rng.normal_vector(2)});
  }
  return f;
}

/// ∇θ ‖y − y_θ(x_t)‖² for one side of a pair.
inline std::vector<double> residual_grad(const MlpModel& policy, std::span<const double> x0, std::span<const double> eps,
                                         double t, std::span<const double> c, PredictionKind kind,
                                         const Schedule& schedule) {
  const Vec x_t = perturb(x0, eps, t, schedule);
  const Vec y = target_value(kind, x0, eps, t, schedule);
  return grad_loss(policy, [&](ad::Tape& tape, const MlpVars& vars) {
           return tape.squared_norm(tape.sub(mlp_forward(tape, vars, x_t, t, c), tape.constant(y)));
         }).grad;
}

inline double residual(const MlpModel& m, std::span<const double> x0, std::span<const double> eps, double t,
                       std::span<const double> c, PredictionKind kind, const Schedule& schedule) {
  const Vec y = target_value(kind, x0, eps, t, schedule);
  const Vec pred = mlp_forward(m, perturb(x0, eps, t, schedule), t, c);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Checks

/// Autodiff of the sigmoid loss against ω(Δ𝒟)·(∇ʷ − ∇ˡ) assembled by hand.
inline CheckResult check_gradient_identity(const Options& opt) {
  const Schedule rf = Schedule::rf();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GradFixture f = make_grad_fixture(seed);
    DpoConfig cfg;
    cfg.lambda_mode = seed % 2 == 0 ? LambdaMode::Constant : LambdaMode::Exact;
    const LossReport auto_grad = dpo_unified_loss_grad(f.policy, f.ref, f.batch, cfg, rf, f.draws);
    std::vector<double> hand(f.policy.param_count(), 0.0);
    const double n = static_cast<double>(f.batch.size());
    for (std::size_t i = 0; i < f.batch.size(); ++i) {
      const auto& p = f.batch[i];
      const auto& d = f.draws[i];
      const double lambda = lambda_weight(rf, d.t, cfg.lambda_mode);
      const double w = opt.dpo_weight(auto_grad.deltas[i], cfg.beta_bar * lambda);
      const auto gw = residual_grad(f.policy, p.x0_w, d.eps_w, d.t, p.c, cfg.kind, rf);
      const auto gl = residual_grad(f.policy, p.x0_l, d.eps_l, d.t, p.c, cfg.kind, rf);
      for (std::size_t k = 0; k < hand.size(); ++k) hand[k] += w * (gw[k] - gl[k]) / n;
    }
    worst = std::max(worst, max_rel_error(hand, auto_grad.grad));
  }
  return {worst < 1e-4, "max rel err " + fmt("%.3e", worst) + " over 20 draws"};
}

/// Autodiff of the Linear-DPO loss against finite differences of the same loss
/// with its weights frozen at the current parameters.
inline CheckResult check_stop_gradient(const Options&) {
  const Schedule rf = Schedule::rf();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GradFixture f = make_grad_fixture(seed + 100);
    DpoConfig cfg;
    cfg.beta_bar = 25.0;  // keeps some weights off the clip bounds
    const LossReport rep = linear_dpo_loss_grad(f.policy, f.ref, f.batch, cfg, rf, f.draws);
    auto frozen = [&](std::span<const double> theta) {
      const MlpModel m = with_params(f.policy, theta);
      double s = 0.0;
      for (std::size_t i = 0; i < f.batch.size(); ++i) {
        const auto& p = f.batch[i];
        const auto& d = f.draws[i];
        s += rep.weights[i] * (residual(m, p.x0_w, d.eps_w, d.t, p.c, cfg.kind, rf) -
                               residual(m, p.x0_l, d.eps_l, d.t, p.c, cfg.kind, rf));
      }
      return s / static_cast<double>(f.batch.size());
    };
    const auto fd = finite_diff_grad(frozen, f.policy.params, 1e-5);
    worst = std::max(worst, max_rel_error(rep.grad, fd));
  }
  return {worst < 1e-4, "max rel err " + fmt("%.3e", worst) + " over 20 draws"};
}

/// grad_loss against central differences for every loss in the objectives.
inline CheckResult check_fd_gradients(const Options&) {
  const Schedule rf = Schedule::rf();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GradFixture f = make_grad_fixture(seed + 200, 3);
    DpoConfig cfg;
    cfg.beta_bar = 25.0;
    const auto samples = winners(f.batch);
    const auto a_dpo = dpo_unified_loss_grad(f.policy, f.ref, f.batch, cfg, rf, f.draws).grad;
    const auto a_sft = sft_loss_grad(f.policy, samples, cfg.kind, rf, f.draws).grad;
    const auto n_dpo = finite_diff_grad(
        [&](std::span<const double> th) {
          return dpo_unified_loss(with_params(f.policy, th), f.ref, f.batch, cfg, rf, f.draws);
        },
        f.policy.params, 1e-5);
    const auto n_sft = finite_diff_grad(
        [&](std::span<const double> th) { return sft_loss(with_params(f.policy, th), samples, cfg.kind, rf, f.draws); },
        f.policy.params, 1e-5);
    worst = std::max({worst, max_rel_error(a_dpo, n_dpo), max_rel_error(a_sft, n_sft)});
  }
  return {worst < 1e-4, "max rel err " + fmt("%.3e", worst)};
}

/// Closed-form KL against a 10⁵-sample Monte-Carlo log-ratio estimate.
inline CheckResult check_kl(const Options&) {
  Rng rng{0, stream::kVerify, 3};
  double worst = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    const Vec mu_a{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double len = rng.uniform(2.0, 4.0);
    const Vec mu_b{mu_a[0] + len * std::cos(angle), mu_a[1] + len * std::sin(angle)};
    for (double s : {0.25, 1.0, 4.0}) {
      const double exact = gaussian_kl_same_cov(mu_a, mu_b, s);
      double acc = 0.0;
      const int n = 100000;
      for (int i = 0; i < n; ++i) {
        const double x0 = mu_a[0] + std::sqrt(s) * rng.normal();
        const double x1 = mu_a[1] + std::sqrt(s) * rng.normal();
        const double da = (x0 - mu_a[0]) * (x0 - mu_a[0]) + (x1 - mu_a[1]) * (x1 - mu_a[1]);
        const double db = (x0 - mu_b[0]) * (x0 - mu_b[0]) + (x1 - mu_b[1]) * (x1 - mu_b[1]);
        acc += (db - da) / (2.0 * s);
      }
      worst = std::max(worst, std::abs(acc / n - exact) / exact);
    }
  }
  return {worst < 0.02, "max rel err " + fmt("%.4f", worst) + " over 30 cases"};
}

/// Score from the analytic Gaussian velocity, and the RF score/velocity round trip.
inline CheckResult check_rf_score(const Options&) {
  const GaussianRf g{2.0};
  const Schedule rf = Schedule::rf();
  Rng rng{0, stream::kVerify, 4};
  double worst_analytic = 0.0;
  for (double t : {0.2, 0.5, 0.8}) {
    for (int i = 0; i < 50; ++i) {
      const double x = rng.uniform(-4.0, 4.0);
      const Vec s = score_from_velocity_rf(Vec{x}, t, Vec{g.velocity(x, t)});
      worst_analytic = std::max(worst_analytic, std::abs(s[0] - g.score(x, t)));
    }
  }
  double worst_round = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.uniform(0.01, 0.99);
    const Vec x = rng.normal_vector(3);
    const Vec v = rng.normal_vector(3);
    const Vec back = velocity_from_score(x, t, score_from_velocity_rf(x, t, v), rf);
    for (std::size_t k = 0; k < v.size(); ++k) worst_round = std::max(worst_round, std::abs(back[k] - v[k]));
  }
  return {worst_analytic < 1e-10 && worst_round < 1e-12,
          "analytic " + fmt("%.2e", worst_analytic) + ", round trip " + fmt("%.2e", worst_round)};
}

/// Monte-Carlo moments of repeated single Euler–Maruyama steps.
inline CheckResult check_em_moments(const Options&) {
  const Vec x{0.7, -1.2};
  const Vec drift{0.3, 0.5};
  const double dt = 0.02, g = 1.3;
  const int n = 10000;
  Rng rng{0, stream::kVerify, 5};
  const EmStep ref_step = euler_maruyama_step(x, dt, drift, g, Vec{0.0, 0.0});
  bool ok = true;
  double worst_z = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double sum = 0.0, sum2 = 0.0;
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) {
      xs[i] = euler_maruyama_step(x, dt, drift, g, rng.normal_vector(2)).x_next[k];
      sum += xs[i];
    }
    const double mean = sum / n;
    for (double v : xs) sum2 += (v - mean) * (v - mean);
    const double var = sum2 / (n - 1);
    const double vs = ref_step.step.variance_scale;
    const double z_mean = std::abs(mean - ref_step.step.mean[k]) / std::sqrt(vs / n);
    const double z_var = std::abs(var - vs) / (vs * std::sqrt(2.0 / (n - 1)));
    worst_z = std::max({worst_z, z_mean, z_var});
    ok = ok && z_mean < 4.0 && z_var < 4.0;
  }
  return {ok, "worst deviation " + fmt("%.2f", worst_z) + " SE"};
}

/// Final-state error of deterministic Euler on the Gaussian RF flow, whose exact
/// solution is x(t) = x(t0)·√(V(t)/V(t0)).
inline std::vector<double> euler_errors(const std::vector<int>& step_counts) {
  const GaussianRf g{2.0};
  const Schedule rf = Schedule::rf();
  const double x_start = 1.5;
  std::vector<double> errors;
  for (int n : step_counts) {
    const double t0 = rf.t_hi(), t1 = rf.t_lo();
    const double dt = (t0 - t1) / n;
    double x = x_start;
    for (int i = 0; i < n; ++i) {
      const double t = t0 - i * dt;
      const Vec d = drift_with_diffusion(Vec{x}, t, Vec{g.velocity(x, t)}, PredictionKind::Velocity, rf, 0.0);
      x = euler_maruyama_step(Vec{x}, dt, d, 0.0, Vec{0.0}).x_next[0];
    }
    const double exact = x_start * std::sqrt(g.variance(t1) / g.variance(t0));
    errors.push_back(std::abs(x - exact));
  }
  return errors;
}

inline CheckResult check_em_order(const Options&) {
  const auto e = euler_errors({25, 50, 100, 200});
  bool ok = true;
  std::string detail = "ratios";
  for (std::size_t i = 0; i + 1 < e.size(); ++i) {
    const double r = e[i] / e[i + 1];
    ok = ok && r >= 1.8 && r <= 2.2;
    detail += " " + fmt("%.3f", r);
  }
  return {ok, detail};
}

struct Moments {
  double mean;
  double variance;
};

/// End-of-chain moments of n samples of the 1D Gaussian RF model (data std s = 2).
inline Moments gaussian_sampler_moments(SampleMode mode, int n, int steps, std::uint64_t seed) {
  const GaussianRf g{2.0};
  const Schedule rf = Schedule::rf();
  auto predict = [&](std::span<const double> x, double t, std::span<const double>) {
    return Vec{g.velocity(x[0], t)};
  };
  double sum = 0.0, sum2 = 0.0;
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    xs[static_cast<std::size_t>(i)] =
        sample_with(predict, rf, PredictionKind::Velocity, {}, 1, steps, mode, seed, static_cast<std::uint64_t>(i))[0];
    sum += xs[static_cast<std::size_t>(i)];
  }
  const double mean = sum / n;
  for (double v : xs) sum2 += (v - mean) * (v - mean);
  return {mean, sum2 / (n - 1)};
}

/// ODE and SDE samplers reproduce the closed-form marginal at t_min.
inline CheckResult check_marginal_equivalence(const Options&) {
  const GaussianRf g{2.0};
  const double v_true = g.variance(Schedule::rf().t_lo());
  const int n = 10000;
  bool ok = true;
  std::string detail;
  for (SampleMode mode : {SampleMode::ODE, SampleMode::SDE}) {
    const Moments m = gaussian_sampler_moments(mode, n, 200, 17);
    const double z_mean = std::abs(m.mean) / std::sqrt(v_true / n);
    const double z_var = std::abs(m.variance - v_true) / (v_true * std::sqrt(2.0 / (n - 1)));
    ok = ok && z_mean < 4.0 && z_var < 4.0;
    detail += std::string(mode == SampleMode::ODE ? "ode" : "sde") + " mean " + fmt("%.2f", z_mean) + " SE var " +
              fmt("%.2f", z_var) + " SE; ";
  }
  return {ok, detail};
}

/// Integrating f and g² from the schedule reproduces α and σ on a 100-point grid.
inline CheckResult check_schedule_roundtrip(const Options&) {
  using boost::math::quadrature::gauss_kronrod;
  double worst = 0.0;
  for (const Schedule& s : {Schedule::vp(), Schedule::ve(), Schedule::ve(1.0), Schedule::rf()}) {
    const double t0 = s.t_lo();
    const Coeffs c0 = s.coeffs(t0);
    for (int i = 1; i <= 100; ++i) {
      const double t = t0 + (s.t_hi() - t0) * i / 100.0;
      const double log_alpha = gauss_kronrod<double, 31>::integrate(
          [&](double u) { return sde_from_schedule(s, u).f; }, t0, t, 15, 1e-13);
      const double alpha = c0.alpha * std::exp(log_alpha);
      const double ratio = gauss_kronrod<double, 31>::integrate(
          [&](double u) {
            const double a = c0.alpha * std::exp(gauss_kronrod<double, 15>::integrate(
                                            [&](double r) { return sde_from_schedule(s, r).f; }, t0, u, 10, 1e-13));
            return sde_from_schedule(s, u).g_squared / (a * a);
          },
          t0, t, 15, 1e-12);
      const double sigma = alpha * std::sqrt(c0.sigma * c0.sigma / (c0.alpha * c0.alpha) + ratio);
      const Coeffs c = s.coeffs(t);
      worst = std::max({worst, std::abs(alpha - c.alpha) / c.alpha, std::abs(sigma - c.sigma) / c.sigma});
    }
  }
  return {worst < 1e-6, "max rel err " + fmt("%.2e", worst)};
}

/// Weight floors, sustained gradient at δ = −0.05, and the normalized utility family.
inline CheckResult check_utilities(const Options&) {
  bool ok = true;
  std::string bad;
  for (UtilityKind k : {UtilityKind::Sigmoid, UtilityKind::KT, UtilityKind::LossAverse, UtilityKind::RiskSeeking,
                        UtilityKind::Linear}) {
    UtilitySpec u;
    u.kind = k;
    const bool ends = normalize_utility(u, -5.0) == 0.0 && normalize_utility(u, 5.0) == 1.0;
    if (!ends) bad += std::string(to_string(k)) + " endpoints; ";
    ok = ok && ends;
  }
  UtilitySpec kt;
  kt.kind = UtilityKind::KT;
  UtilitySpec lin;
  if (normalize_utility(kt, 0.0) != 0.5 || normalize_utility(lin, 0.0) != 0.5) {
    ok = false;
    bad += "midpoint; ";
  }
  DpoConfig cfg;
  const double sig = sigmoid(cfg.beta_bar * -0.05);
  const double lw = linear_dpo_weight(-0.05, cfg);
  if (!(lw == cfg.utility.floor_eta && sig < lw)) {
    ok = false;
    bad += "sustained gradient; ";
  }
  return {ok, ok ? "sigmoid weight " + fmt("%.3e", sig) + " < floor " + fmt("%g", lw) : bad};
}

/// ‖ref_k − θ‖ = γᵏ‖ref_0 − θ‖ under a constant policy.
inline CheckResult check_ema(const Options&) {
  const MlpModel theta = mlp_init({6, 8, 2}, Activation::SiLU, 5);
  MlpModel ref = mlp_init({6, 8, 2}, Activation::SiLU, 6);
  auto dist = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < ref.params.size(); ++i)
      s += (ref.params[i] - theta.params[i]) * (ref.params[i] - theta.params[i]);
    return std::sqrt(s);
  };
  const double d0 = dist();
  const double gamma = 0.995;
  for (int k = 0; k < 100; ++k) ema_update(ref, theta, gamma);
  const double err = std::abs(dist() - std::pow(gamma, 100) * d0);
  return {err < 1e-12, "abs err " + fmt("%.2e", err)};
}

// ---------------------------------------------------------------------------
// Registry

inline std::vector<Check> registry() {
  return {
      {"gradient-identity", check_gradient_identity},
      {"stop-gradient", check_stop_gradient},
      {"fd-gradients", check_fd_gradients},
      {"kl-closed-form", check_kl},
      {"rf-score-identity", check_rf_score},
      {"em-moments", check_em_moments},
      {"em-order", check_em_order},
      {"marginal-equivalence", check_marginal_equivalence},
      {"schedule-roundtrip", check_schedule_roundtrip},
      {"utilities", check_utilities},
      {"ema-geometry", check_ema},
  };
}

/// Runs every check whose name contains `filter` (all when empty).
inline std::vector<Outcome> run_checks(std::string_view filter, const Options& opt = {}) {
  std::vector<Outcome> out;
  for (const Check& c : registry()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = c.run(opt);
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    const std::chrono::duration<double> el = std::chrono::steady_clock::now() - start;
    out.push_back({c.name, std::move(r), el.count()});
  }
  return out;
}

}  // namespace lindpo::verify
