// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lindpo/errors.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/rng.hpp"
#include "lindpo/schedules.hpp"

namespace lindpo {

using Vec = std::vector<double>;

/// What the network regresses onto: the noise ε (VP), the conditional score (VE)
/// or the rectified-flow velocity x1 − x0 (RF).
enum class PredictionKind { Epsilon, Score, Velocity };

inline std::string_view to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::Epsilon: return "epsilon";
    case PredictionKind::Score: return "score";
    case PredictionKind::Velocity: return "velocity";
  }
  return "?";
}

inline PredictionKind parse_prediction_kind(std::string_view s) {
  if (s == "epsilon") return PredictionKind::Epsilon;
  if (s == "score") return PredictionKind::Score;
  if (s == "velocity") return PredictionKind::Velocity;
  throw ConfigError("unknown prediction kind '" + std::string(s) + "'");
}

inline PredictionKind default_kind(Paradigm p) {
  switch (p) {
    case Paradigm::VP: return PredictionKind::Epsilon;
    case Paradigm::VE: return PredictionKind::Score;
    case Paradigm::RF: break;
  }
  return PredictionKind::Velocity;
}

inline void check_pairing(PredictionKind kind, const Schedule& schedule) {
  if (kind != default_kind(schedule.paradigm()))
    throw ConfigError("prediction kind '" + std::string(to_string(kind)) + "' is not supported with the '" +
                      std::string(to_string(schedule.paradigm())) + "' schedule");
}

enum class SampleMode { ODE, SDE };

inline SampleMode parse_sample_mode(std::string_view s) {
  if (s == "ode") return SampleMode::ODE;
  if (s == "sde") return SampleMode::SDE;
  throw ConfigError("unknown sampling mode '" + std::string(s) + "' (expected ode or sde)");
}

/// Isotropic Gaussian N(mean, variance_scale·I) of one Euler–Maruyama transition.
struct GaussianStep {
  Vec mean;
  double variance_scale;
};

namespace detail {
inline void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": dimension mismatch");
}
inline void require_window(const Schedule& s, double t, const char* what) {
  if (!(t >= s.t_lo() && t <= s.t_hi())) throw DomainError(std::string(what) + ": t outside [t_min, 1 - t_min]");
}
}  // namespace detail

/// x_t = α(t)·x0 + σ(t)·ε.
inline Vec perturb(std::span<const double> x0, std::span<const double> eps, double t, const Schedule& schedule) {
  detail::require_same_size(x0, eps, "perturb");
  const Coeffs c = schedule.coeffs(t);
  Vec x(x0.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = c.alpha * x0[i] + c.sigma * eps[i];
  return x;
}

/// Regression target: ε, −ε/σ(t), or ε − x0 (for RF ε plays the role of x1).
inline Vec target_value(PredictionKind kind, std::span<const double> x0, std::span<const double> eps, double t,
                        const Schedule& schedule) {
  detail::require_same_size(x0, eps, "target_value");
  switch (kind) {
    case PredictionKind::Epsilon: return Vec(eps.begin(), eps.end());
    case PredictionKind::Score: {
      const double sigma = schedule.coeffs(t).sigma;
      if (sigma == 0.0) throw SingularityError("score target undefined where sigma(t) = 0");
      Vec y(eps.size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = -eps[i] / sigma;
      return y;
    }
    case PredictionKind::Velocity: {
      Vec y(eps.size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = eps[i] - x0[i];
      return y;
    }
  }
  return {};
}

/// Rectified-flow marginal score from the velocity: −x/t − ((1−t)/t)·v.
inline Vec score_from_velocity_rf(std::span<const double> x, double t, std::span<const double> v,
                                  double t_min = 1e-3) {
  detail::require_same_size(x, v, "score_from_velocity_rf");
  if (!(t >= t_min)) throw SingularityError("score_from_velocity_rf: t below t_min");
  if (t > 1.0) throw DomainError("score_from_velocity_rf: t above 1");
  Vec s(x.size());
  const double k = (1.0 - t) / t;
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = -x[i] / t - k * v[i];
  return s;
}

/// v = (α̇/α)·x − σ(σ̇ − α̇σ/α)·score.
inline Vec velocity_from_score(std::span<const double> x, double t, std::span<const double> score,
                               const Schedule& schedule) {
  detail::require_same_size(x, score, "velocity_from_score");
  const Coeffs c = schedule.coeffs(t);
  if (c.alpha == 0.0) throw SingularityError("velocity_from_score: alpha(t) = 0");
  const double a = c.alpha_dot / c.alpha;
  const double b = c.sigma * (c.sigma_dot - c.alpha_dot * c.sigma / c.alpha);
  Vec v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * x[i] - b * score[i];
  return v;
}

/// Reverse-time drift with explicit sampling diffusion g_s².
///
///   Velocity: v + g_s²/(2t)·(x + (1−t)v)
///   Score:    f·x − ((g² + g_s²)/2)·s        (g_s = g: reverse SDE, g_s = 0: probability-flow ODE)
///   Epsilon:  Score branch with s = −ε/σ(t)
inline Vec drift_with_diffusion(std::span<const double> x, double t, std::span<const double> prediction,
                                PredictionKind kind, const Schedule& schedule, double sampling_g_squared) {
  detail::require_same_size(x, prediction, "drift");
  check_pairing(kind, schedule);
  detail::require_window(schedule, t, "drift");
  Vec d(x.size());
  if (kind == PredictionKind::Velocity) {
    const double k = sampling_g_squared / (2.0 * t);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = prediction[i] + k * (x[i] + (1.0 - t) * prediction[i]);
    return d;
  }
  const SdeCoeffs sde = sde_from_schedule(schedule, t);
  double score_scale = 1.0;
  if (kind == PredictionKind::Epsilon) score_scale = -1.0 / schedule.coeffs(t).sigma;
  const double k = 0.5 * (sde.g_squared + sampling_g_squared);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = sde.f * x[i] - k * score_scale * prediction[i];
  return d;
}

/// Drift of the sampling SDE at the schedule's configured diffusion.
inline Vec drift(std::span<const double> x, double t, std::span<const double> prediction, PredictionKind kind,
                 const Schedule& schedule) {
  const double g = schedule.sampling_g(t);
  return drift_with_diffusion(x, t, prediction, kind, schedule, g * g);
}

struct EmStep {
  Vec x_next;
  GaussianStep step;
};

/// One backward step t → t − dt: x − drift·dt + g·√dt·noise.
inline EmStep euler_maruyama_step(std::span<const double> x, double dt, std::span<const double> drift_value,
                                  double g, std::span<const double> noise) {
  if (!(dt > 0.0)) throw DomainError("euler_maruyama_step: dt must be positive");
  detail::require_same_size(x, drift_value, "euler_maruyama_step");
  detail::require_same_size(x, noise, "euler_maruyama_step");
  EmStep out{Vec(x.size()), {Vec(x.size()), g * g * dt}};
  const double amp = g * std::sqrt(dt);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.step.mean[i] = x[i] - drift_value[i] * dt;
    out.x_next[i] = out.step.mean[i] + amp * noise[i];
  }
  return out;
}

/// Integrates from t = 1 − t_min down to t = t_min on a uniform grid, starting
/// from σ(1 − t_min)·z. `predict(x, t, c)` supplies the network output; ODE mode
/// runs the deterministic flow (sampling diffusion 0). `chain` selects an
/// independent noise stream for the same seed.
template <class Predictor>
Vec sample_with(Predictor&& predict, const Schedule& schedule, PredictionKind kind, std::span<const double> c,
                std::size_t dim, int steps, SampleMode mode, std::uint64_t seed, std::uint64_t chain = 0) {
  if (steps <= 0) throw DomainError("sample: steps must be positive");
  check_pairing(kind, schedule);
  const double t_start = schedule.t_hi();
  const double t_end = schedule.t_lo();
  const double dt = (t_start - t_end) / steps;

  Rng init{seed, stream::kSample, chain, 0};
  Vec x = init.normal_vector(dim);
  const double sigma_start = schedule.coeffs(t_start).sigma;
  for (double& v : x) v *= sigma_start;

  Vec noise(dim, 0.0);
  for (int i = 0; i < steps; ++i) {
    const double t = t_start - i * dt;
    const Vec pred = predict(std::span<const double>(x), t, c);
    const double g = mode == SampleMode::SDE ? schedule.sampling_g(t) : 0.0;
    const Vec d = drift_with_diffusion(x, t, pred, kind, schedule, g * g);
    if (mode == SampleMode::SDE) {
      Rng rng{seed, stream::kSample, chain, static_cast<std::uint64_t>(i) + 1};
      for (double& v : noise) v = rng.normal();
    }
    x = euler_maruyama_step(x, dt, d, g, noise).x_next;
  }
  return x;
}

/// One generated sample from an MLP predictor.
inline Vec sample(const MlpModel& model, const Schedule& schedule, PredictionKind kind, std::span<const double> c,
                  int steps, SampleMode mode, std::uint64_t seed, std::uint64_t chain = 0) {
  auto predict = [&](std::span<const double> x, double t, std::span<const double> cond) {
    return mlp_forward(model, x, t, cond);
  };
  return sample_with(predict, schedule, kind, c, model.data_dim(), steps, mode, seed, chain);
}

/// n independent samples, chain i using noise stream i.
inline std::vector<Vec> sample_many(const MlpModel& model, const Schedule& schedule, PredictionKind kind,
                                    std::span<const double> c, std::size_t n, int steps, SampleMode mode,
                                    std::uint64_t seed) {
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample(model, schedule, kind, c, steps, mode, seed, i));
  return out;
}

/// KL(N(μa, sI) ‖ N(μb, sI)) = ‖μa − μb‖² / (2s).
inline double gaussian_kl_same_cov(std::span<const double> mu_a, std::span<const double> mu_b,
                                   double variance_scale) {
  detail::require_same_size(mu_a, mu_b, "gaussian_kl_same_cov");
  if (!(variance_scale > 0.0)) throw DomainError("gaussian_kl_same_cov: variance_scale must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) s += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
  return s / (2.0 * variance_scale);
}

}  // namespace lindpo
