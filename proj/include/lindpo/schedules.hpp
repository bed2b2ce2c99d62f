// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "lindpo/errors.hpp"

namespace lindpo {

enum class Paradigm { VP, VE, RF };

inline std::string_view to_string(Paradigm p) {
  switch (p) {
    case Paradigm::VP: return "vp";
    case Paradigm::VE: return "ve";
    case Paradigm::RF: return "rf";
  }
  return "?";
}

inline Paradigm parse_paradigm(std::string_view s) {
  if (s == "vp") return Paradigm::VP;
  if (s == "ve") return Paradigm::VE;
  if (s == "rf") return Paradigm::RF;
  throw ConfigError("unknown schedule '" + std::string(s) + "' (expected vp, ve or rf)");
}

/// Interpolation coefficients of x_t = α(t)·x0 + σ(t)·ε and their time derivatives.
struct Coeffs {
  double alpha;
  double sigma;
  double alpha_dot;
  double sigma_dot;
};

/// Coefficients of the forward SDE dx = f(t)·x dt + g(t) dw.
struct SdeCoeffs {
  double f;
  double g_squared;
};

/// Noise schedule for one of the three paradigms.
///
///   VP: α = e^{-t},  σ² = 1 - e^{-2t}          (constant g² = 2)
///   VE: α = 1,       σ  = t^p, p = ve_power    (p = 1/2 gives constant g² = 1)
///   RF: α = 1 - t,   σ  = t
///
/// The sampling SDE uses diffusion amplitude sampling_g(t) = scale·base(t), where
/// base(t) = √t for RF and the forward g(t) for VP/VE. Scale 1 on VP/VE is the
/// reverse-time SDE; scale 0 is the probability-flow ODE.
class Schedule {
 public:
  static Schedule vp(double sampling_g_scale = 1.0, double t_min = 1e-3) {
    return Schedule(Paradigm::VP, sampling_g_scale, t_min, 0.5);
  }
  static Schedule ve(double ve_power = 0.5, double sampling_g_scale = 1.0, double t_min = 1e-3) {
    if (!(ve_power > 0.0)) throw ConfigError("ve_power must be positive");
    return Schedule(Paradigm::VE, sampling_g_scale, t_min, ve_power);
  }
  static Schedule rf(double sampling_g_scale = 1.0, double t_min = 1e-3) {
    return Schedule(Paradigm::RF, sampling_g_scale, t_min, 0.5);
  }
  static Schedule make(Paradigm p, double sampling_g_scale = 1.0, double t_min = 1e-3) {
    switch (p) {
      case Paradigm::VP: return vp(sampling_g_scale, t_min);
      case Paradigm::VE: return ve(0.5, sampling_g_scale, t_min);
      case Paradigm::RF: break;
    }
    return rf(sampling_g_scale, t_min);
  }

  Paradigm paradigm() const noexcept { return paradigm_; }
  double t_min() const noexcept { return t_min_; }
  double sampling_g_scale() const noexcept { return g_scale_; }
  double ve_power() const noexcept { return ve_power_; }

  double t_lo() const noexcept { return t_min_; }
  double t_hi() const noexcept { return 1.0 - t_min_; }
  double clamp(double t) const noexcept { return std::clamp(t, t_lo(), t_hi()); }

  Coeffs coeffs(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule time must lie in [0, 1]");
    switch (paradigm_) {
      case Paradigm::VP: {
        const double a = std::exp(-t);
        const double s2 = -std::expm1(-2.0 * t);
        const double s = std::sqrt(s2);
        const double s_dot = s > 0.0 ? std::exp(-2.0 * t) / s : std::numeric_limits<double>::infinity();
        return {a, s, -a, s_dot};
      }
      case Paradigm::VE: {
        const double p = ve_power_;
        const double s = std::pow(t, p);
        const double s_dot = (t > 0.0 || p >= 1.0) ? p * std::pow(t, p - 1.0)
                                                   : std::numeric_limits<double>::infinity();
        return {1.0, s, 0.0, s_dot};
      }
      case Paradigm::RF: return {1.0 - t, t, -1.0, 1.0};
    }
    return {};
  }

  /// Diffusion amplitude of the sampling SDE.
  double sampling_g(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule time must lie in [0, 1]");
    switch (paradigm_) {
      case Paradigm::RF: return g_scale_ * std::sqrt(t);
      case Paradigm::VP: return g_scale_ * std::sqrt(2.0);
      case Paradigm::VE: return g_scale_ * std::sqrt(forward_g_squared(t));
    }
    return 0.0;
  }

  /// Closed-form g² of the forward SDE for VP/VE. Undefined for RF.
  double forward_g_squared(double t) const {
    switch (paradigm_) {
      case Paradigm::VP: return 2.0;
      case Paradigm::VE: return 2.0 * ve_power_ * std::pow(t, 2.0 * ve_power_ - 1.0);
      case Paradigm::RF: break;
    }
    throw ConfigError("rectified flow has no forward diffusion coefficient");
  }

 private:
  Schedule(Paradigm p, double g_scale, double t_min, double ve_power)
      : paradigm_(p), g_scale_(g_scale), t_min_(t_min), ve_power_(ve_power) {
    if (!(t_min > 0.0 && t_min < 0.5)) throw ConfigError("t_min must lie in (0, 0.5)");
    if (!(g_scale >= 0.0) || !std::isfinite(g_scale)) throw ConfigError("sampling_g_scale must be >= 0");
  }

  Paradigm paradigm_;
  double g_scale_;
  double t_min_;
  double ve_power_;
};

inline Coeffs schedule_coeffs(const Schedule& schedule, double t) { return schedule.coeffs(t); }

/// f = α̇/α and g² = d(σ²)/dt − 2fσ². For RF these describe the deterministic
/// interpolation, so g² comes out as 2t/(1−t) rather than a sampling choice.
inline SdeCoeffs sde_from_schedule(const Schedule& schedule, double t) {
  if (!(t >= schedule.t_lo() && t <= schedule.t_hi()))
    throw DomainError("sde_from_schedule: t outside [t_min, 1 - t_min]");
  const Coeffs c = schedule.coeffs(t);
  if (c.alpha == 0.0) throw SingularityError("sde_from_schedule: alpha(t) = 0");
  const double f = c.alpha_dot / c.alpha;
  const double g2 = 2.0 * c.sigma * c.sigma_dot - 2.0 * f * c.sigma * c.sigma;
  return {f, g2};
}

}  // namespace lindpo
