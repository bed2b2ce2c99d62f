// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lindpo/autodiff.hpp"
#include "lindpo/dynamics.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/rng.hpp"
#include "lindpo/schedules.hpp"

namespace lindpo {

// ---------------------------------------------------------------------------
// Scalar helpers

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double log_sigmoid(double x) { return -softplus(-x); }

// ---------------------------------------------------------------------------
// Utility family

enum class UtilityKind { Sigmoid, KT, LossAverse, RiskSeeking, Linear };

inline std::string_view to_string(UtilityKind k) {
  switch (k) {
    case UtilityKind::Sigmoid: return "sigmoid";
    case UtilityKind::KT: return "kt";
    case UtilityKind::LossAverse: return "loss_averse";
    case UtilityKind::RiskSeeking: return "risk_seeking";
    case UtilityKind::Linear: return "linear";
  }
  return "?";
}

inline UtilityKind parse_utility(std::string_view s) {
  if (s == "sigmoid") return UtilityKind::Sigmoid;
  if (s == "kt") return UtilityKind::KT;
  if (s == "loss_averse") return UtilityKind::LossAverse;
  if (s == "risk_seeking") return UtilityKind::RiskSeeking;
  if (s == "linear") return UtilityKind::Linear;
  throw ConfigError("unknown utility '" + std::string(s) + "'");
}

struct UtilitySpec {
  UtilityKind kind = UtilityKind::Linear;
  double slope = 0.2;      // Linear only
  double intercept = 0.5;  // Linear only
  double floor_eta = 1e-2;
  double ceil = 1.0;
  double norm_window = 5.0;
};

inline void validate(const UtilitySpec& u) {
  if (!(u.floor_eta >= 0.0 && u.floor_eta < 1.0)) throw ConfigError("eta must lie in [0, 1)");
  if (!(u.floor_eta < u.ceil)) throw ConfigError("eta must be below the utility ceiling");
  if (u.kind == UtilityKind::Linear && !(u.slope > 0.0)) throw ConfigError("linear utility slope must be positive");
  if (!(u.norm_window > 0.0)) throw ConfigError("normalization window must be positive");
}

/// Raw utility U(x), neither normalized nor clipped. Sigmoid and KT share the
/// form σ(x); Sigmoid is the DPO gate, KT its normalized ablation counterpart.
inline double utility(const UtilitySpec& spec, double x) {
  switch (spec.kind) {
    case UtilityKind::Sigmoid:
    case UtilityKind::KT: return sigmoid(x);
    case UtilityKind::LossAverse: return log_sigmoid(x);
    case UtilityKind::RiskSeeking: return -log_sigmoid(-x);
    case UtilityKind::Linear: return spec.slope * x + spec.intercept;
  }
  return 0.0;
}

/// clip((U(x) − U(−w)) / (U(w) − U(−w)), 0, 1) with w = norm_window.
///
/// σ(x) = ½ + ½·tanh(x/2) and the linear utility are a constant plus an odd
/// part h, where the ratio reduces to (h(x) + h(w)) / 2h(w); evaluating that
/// form keeps U(0) at exactly ½.
inline double normalize_utility(const UtilitySpec& spec, double x) {
  const double w = spec.norm_window;
  double num = 0.0, den = 0.0;
  switch (spec.kind) {
    case UtilityKind::Sigmoid:
    case UtilityKind::KT: {
      const double hw = std::tanh(0.5 * w);
      num = std::tanh(0.5 * x) + hw;
      den = hw + hw;
      break;
    }
    case UtilityKind::Linear: {
      const double hw = spec.slope * w;
      num = spec.slope * x + hw;
      den = hw + hw;
      break;
    }
    case UtilityKind::LossAverse:
    case UtilityKind::RiskSeeking: {
      const double lo = utility(spec, -w);
      num = utility(spec, x) - lo;
      den = utility(spec, w) - lo;
      break;
    }
  }
  if (!(den != 0.0) || !std::isfinite(den)) throw DomainError("normalize_utility: degenerate window");
  return std::clamp(num / den, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// DPO configuration and data

enum class LambdaMode { Constant, Exact };

inline LambdaMode parse_lambda_mode(std::string_view s) {
  if (s == "constant") return LambdaMode::Constant;
  if (s == "exact") return LambdaMode::Exact;
  throw ConfigError("unknown lambda_mode '" + std::string(s) + "'");
}
inline std::string_view to_string(LambdaMode m) { return m == LambdaMode::Constant ? "constant" : "exact"; }

struct DpoConfig {
  double beta_bar = 250.0;  // β̄ = βTλ(t) folded into one constant
  LambdaMode lambda_mode = LambdaMode::Constant;
  PredictionKind kind = PredictionKind::Velocity;
  UtilitySpec utility{};
  double gamma_ema = 0.995;
  int T_steps = 1000;
  bool shared_noise = false;
};

inline void validate(const DpoConfig& cfg) {
  if (!(cfg.beta_bar > 0.0) || !std::isfinite(cfg.beta_bar)) throw ConfigError("beta_bar must be positive");
  if (!(cfg.gamma_ema >= 0.0 && cfg.gamma_ema <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (cfg.T_steps < 2) throw ConfigError("T_steps must be at least 2");
  validate(cfg.utility);
}

struct PreferencePair {
  Vec x0_w;
  Vec x0_l;
  Vec c;
};

/// A single conditioned sample (SFT data).
struct Sample {
  Vec x0;
  Vec c;
};

/// Per-pair randomness: one shared t, and noises for winner and loser.
struct NoiseDraw {
  double t;
  Vec eps_w;
  Vec eps_l;
};

/// t = k/T with k uniform in {1, …, T−1}, clamped to [t_min, 1 − t_min].
inline double draw_time(Rng& rng, const Schedule& schedule, int T_steps) {
  const auto k = rng.integer(1, T_steps - 1);
  return schedule.clamp(static_cast<double>(k) / static_cast<double>(T_steps));
}

inline std::vector<NoiseDraw> draw_noise(Rng& rng, std::size_t n, std::size_t dim, const Schedule& schedule,
                                         const DpoConfig& cfg) {
  std::vector<NoiseDraw> draws;
  draws.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    NoiseDraw d;
    d.t = draw_time(rng, schedule, cfg.T_steps);
    d.eps_w = rng.normal_vector(dim);
    d.eps_l = cfg.shared_noise ? d.eps_w : rng.normal_vector(dim);
    draws.push_back(std::move(d));
  }
  return draws;
}

// ---------------------------------------------------------------------------
// Margin, weights, λ(t)

/// residual_w = 𝒟(x_tʷ) = ‖yʷ − y_θ‖² − ‖yʷ − y_ref‖², residual_l likewise,
/// delta = residual_w − residual_l.
struct DeltaTerms {
  double delta;
  double residual_w;
  double residual_l;
};

namespace detail {
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}
}  // namespace detail

inline DeltaTerms delta_d(const MlpModel& policy, const MlpModel& ref, const PreferencePair& pair, double t,
                          std::span<const double> eps_w, std::span<const double> eps_l, PredictionKind kind,
                          const Schedule& schedule) {
  if (!(t >= schedule.t_lo() && t <= schedule.t_hi())) throw DomainError("delta_d: t outside [t_min, 1 - t_min]");
  auto residual = [&](const Vec& x0, std::span<const double> eps) {
    const Vec x_t = perturb(x0, eps, t, schedule);
    const Vec y = target_value(kind, x0, eps, t, schedule);
    return detail::squared_distance(y, mlp_forward(policy, x_t, t, pair.c)) -
           detail::squared_distance(y, mlp_forward(ref, x_t, t, pair.c));
  };
  const double rw = residual(pair.x0_w, eps_w);
  const double rl = residual(pair.x0_l, eps_l);
  return {rw - rl, rw, rl};
}

/// −log σ(−β̄·δ) = softplus(β̄·δ).
inline double dpo_sigmoid_loss(double delta, double beta_bar) { return softplus(beta_bar * delta); }

/// ω(δ) = β̄·σ(β̄·δ), the per-pair gradient scale of the sigmoid objective.
inline double dpo_gradient_weight(double delta, double beta_bar) { return beta_bar * sigmoid(beta_bar * delta); }

/// ω′ = clip(u(β̄λ·δ), η, ceil). The linear utility is used raw; the others
/// through normalize_utility (the Sigmoid kind raw, reproducing σ(β̄δ)).
inline double linear_dpo_weight(double delta, const DpoConfig& cfg, double lambda = 1.0) {
  const UtilitySpec& u = cfg.utility;
  const double x = cfg.beta_bar * lambda * delta;
  double w = 0.0;
  switch (u.kind) {
    case UtilityKind::Linear:
    case UtilityKind::Sigmoid: w = utility(u, x); break;
    default: w = normalize_utility(u, x); break;
  }
  return std::clamp(w, u.floor_eta, u.ceil);
}

/// Exact per-paradigm weighting λ(t) given the diffusion coefficient g²:
///   VP: g²/(2σ²), VE: g²/2, RF: (1/(2g²))·(1 + g²(1−t)/(2t))².
inline double lambda_exact(Paradigm paradigm, double t, double g_squared, double sigma) {
  if (!(t > 0.0 && t < 1.0)) throw DomainError("lambda_weight: t must lie strictly inside (0, 1)");
  switch (paradigm) {
    case Paradigm::VP:
      if (sigma == 0.0) throw DomainError("lambda_weight: sigma(t) = 0");
      return g_squared / (2.0 * sigma * sigma);
    case Paradigm::VE: return g_squared / 2.0;
    case Paradigm::RF: {
      if (!(g_squared > 0.0)) throw DomainError("lambda_weight: RF weighting needs g(t) > 0");
      const double k = 1.0 + g_squared * (1.0 - t) / (2.0 * t);
      return k * k / (2.0 * g_squared);
    }
  }
  return 1.0;
}

inline double lambda_weight(const Schedule& schedule, double t, LambdaMode mode) {
  if (!(t >= schedule.t_lo() && t <= schedule.t_hi())) throw DomainError("lambda_weight: t outside [t_min, 1 - t_min]");
  if (mode == LambdaMode::Constant) return 1.0;
  const Paradigm p = schedule.paradigm();
  if (p == Paradigm::RF) {
    const double g = schedule.sampling_g(t);
    return lambda_exact(p, t, g * g, t);
  }
  return lambda_exact(p, t, schedule.forward_g_squared(t), schedule.coeffs(t).sigma);
}

/// Fraction of margins strictly below zero; exact ties count one half.
inline double implicit_accuracy(std::span<const double> deltas) {
  if (deltas.empty()) throw ContractError("implicit_accuracy: no margins");
  double hits = 0.0;
  for (double d : deltas) hits += d < 0.0 ? 1.0 : (d == 0.0 ? 0.5 : 0.0);
  return hits / static_cast<double>(deltas.size());
}

// ---------------------------------------------------------------------------
// Batch losses

enum class Objective { LinearDpo, SigmoidDpo, Sft };

/// Loss value, its gradient in policy parameter order, and the per-pair margins
/// and weights seen while building it.
struct LossReport {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> deltas;
  std::vector<double> weights;
};

namespace detail {

struct PairGraph {
  ad::Var err_w;  // ‖yʷ − y_θ(x_tʷ)‖² on the tape
  ad::Var err_l;
  double ref_w;  // ‖yʷ − y_ref(x_tʷ)‖²
  double ref_l;
};

inline PairGraph build_pair(ad::Tape& tape, const MlpVars& policy, const MlpModel* ref, const PreferencePair& pair,
                            const NoiseDraw& draw, PredictionKind kind, const Schedule& schedule) {
  auto side = [&](const Vec& x0, const Vec& eps, ad::Var& err, double& ref_err) {
    const Vec x_t = perturb(x0, eps, draw.t, schedule);
    const Vec y = target_value(kind, x0, eps, draw.t, schedule);
    const ad::Var pred = mlp_forward(tape, policy, x_t, draw.t, pair.c);
    err = tape.squared_norm(tape.sub(pred, tape.constant(y)));
    ref_err = ref ? squared_distance(y, mlp_forward(*ref, x_t, draw.t, pair.c)) : 0.0;
  };
  PairGraph g{};
  side(pair.x0_w, draw.eps_w, g.err_w, g.ref_w);
  side(pair.x0_l, draw.eps_l, g.err_l, g.ref_l);
  return g;
}

inline void check_batch(std::size_t batch, std::size_t draws) {
  if (batch == 0) throw ContractError("loss over an empty batch");
  if (draws != batch) throw ContractError("need exactly one noise draw per pair");
}

/// Builds the batch-mean loss on `tape`, recording margins and weights.
inline ad::Var build_loss(ad::Tape& tape, const MlpVars& policy, const MlpModel& ref,
                          std::span<const PreferencePair> batch, const DpoConfig& cfg, const Schedule& schedule,
                          std::span<const NoiseDraw> draws, Objective objective, LossReport& report) {
  check_batch(batch.size(), draws.size());
  check_pairing(cfg.kind, schedule);
  std::vector<ad::Var> terms;
  terms.reserve(batch.size());
  report.deltas.clear();
  report.weights.clear();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PairGraph g = build_pair(tape, policy, &ref, batch[i], draws[i], cfg.kind, schedule);
    const double d_w = tape.scalar(g.err_w) - g.ref_w;
    const double d_l = tape.scalar(g.err_l) - g.ref_l;
    const double delta = d_w - d_l;
    const double lambda = lambda_weight(schedule, draws[i].t, cfg.lambda_mode);
    report.deltas.push_back(delta);
    switch (objective) {
      case Objective::LinearDpo: {
        // sg(ω′): the weight enters as a plain number.
        const double w = linear_dpo_weight(delta, cfg, lambda);
        report.weights.push_back(w);
        terms.push_back(tape.scale(tape.sub(g.err_w, g.err_l), w));
        break;
      }
      case Objective::SigmoidDpo: {
        report.weights.push_back(dpo_gradient_weight(delta, cfg.beta_bar * lambda));
        const ad::Var dw = tape.sub(g.err_w, tape.constant(g.ref_w));
        const ad::Var dl = tape.sub(g.err_l, tape.constant(g.ref_l));
        terms.push_back(tape.softplus(tape.scale(tape.sub(dw, dl), cfg.beta_bar * lambda)));
        break;
      }
      case Objective::Sft:
        report.weights.push_back(1.0);
        terms.push_back(g.err_w);
        break;
    }
  }
  return tape.mean(terms);
}

inline LossReport evaluate(const MlpModel& policy, const MlpModel& ref, std::span<const PreferencePair> batch,
                           const DpoConfig& cfg, const Schedule& schedule, std::span<const NoiseDraw> draws,
                           Objective objective, bool with_grad) {
  if (!policy.same_architecture(ref)) throw ContractError("policy and reference architectures differ");
  LossReport report;
  ad::Tape tape;
  const MlpVars vars = bind(tape, policy);
  const ad::Var loss = build_loss(tape, vars, ref, batch, cfg, schedule, draws, objective, report);
  report.loss = tape.scalar(loss);
  if (with_grad) {
    tape.backward(loss);
    report.grad = gather_grad(tape, vars);
  }
  return report;
}

}  // namespace detail

/// mean_i sg(ω′(Δ𝒟_i))·(‖yʷ − y_θ(x_tʷ)‖² − ‖yˡ − y_θ(x_tˡ)‖²).
inline double linear_dpo_loss(const MlpModel& policy, const MlpModel& ref, std::span<const PreferencePair> batch,
                              const DpoConfig& cfg, const Schedule& schedule, std::span<const NoiseDraw> draws) {
  return detail::evaluate(policy, ref, batch, cfg, schedule, draws, Objective::LinearDpo, false).loss;
}

inline LossReport linear_dpo_loss_grad(const MlpModel& policy, const MlpModel& ref,
                                       std::span<const PreferencePair> batch, const DpoConfig& cfg,
                                       const Schedule& schedule, std::span<const NoiseDraw> draws) {
  return detail::evaluate(policy, ref, batch, cfg, schedule, draws, Objective::LinearDpo, true);
}

/// mean_i −log σ(−β̄λ(t_i)·Δ𝒟_i).
inline double dpo_unified_loss(const MlpModel& policy, const MlpModel& ref, std::span<const PreferencePair> batch,
                               const DpoConfig& cfg, const Schedule& schedule, std::span<const NoiseDraw> draws) {
  return detail::evaluate(policy, ref, batch, cfg, schedule, draws, Objective::SigmoidDpo, false).loss;
}

inline LossReport dpo_unified_loss_grad(const MlpModel& policy, const MlpModel& ref,
                                        std::span<const PreferencePair> batch, const DpoConfig& cfg,
                                        const Schedule& schedule, std::span<const NoiseDraw> draws) {
  return detail::evaluate(policy, ref, batch, cfg, schedule, draws, Objective::SigmoidDpo, true);
}

namespace detail {
inline ad::Var build_sft(ad::Tape& tape, const MlpVars& policy, std::span<const Sample> samples,
                         PredictionKind kind, const Schedule& schedule, std::span<const NoiseDraw> draws) {
  check_batch(samples.size(), draws.size());
  check_pairing(kind, schedule);
  std::vector<ad::Var> terms;
  terms.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const NoiseDraw& d = draws[i];
    const Vec x_t = perturb(samples[i].x0, d.eps_w, d.t, schedule);
    const Vec y = target_value(kind, samples[i].x0, d.eps_w, d.t, schedule);
    const ad::Var pred = mlp_forward(tape, policy, x_t, d.t, samples[i].c);
    terms.push_back(tape.squared_norm(tape.sub(pred, tape.constant(y))));
  }
  return tape.mean(terms);
}
}  // namespace detail

/// mean ‖y − y_θ(x_t, t, c)‖² over the samples (winners). Only eps_w of each draw is used.
inline double sft_loss(const MlpModel& policy, std::span<const Sample> samples, PredictionKind kind,
                       const Schedule& schedule, std::span<const NoiseDraw> draws) {
  ad::Tape tape;
  const MlpVars vars = bind(tape, policy);
  return tape.scalar(detail::build_sft(tape, vars, samples, kind, schedule, draws));
}

inline GradResult sft_loss_grad(const MlpModel& policy, std::span<const Sample> samples, PredictionKind kind,
                                const Schedule& schedule, std::span<const NoiseDraw> draws) {
  return grad_loss(policy, [&](ad::Tape& tape, const MlpVars& vars) {
    return detail::build_sft(tape, vars, samples, kind, schedule, draws);
  });
}

inline std::vector<Sample> winners(std::span<const PreferencePair> pairs) {
  std::vector<Sample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.x0_w, p.c});
  return out;
}

/// Every candidate in the pairs, winners and losers alike.
inline std::vector<Sample> all_candidates(std::span<const PreferencePair> pairs) {
  std::vector<Sample> out;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    out.push_back({p.x0_w, p.c});
    out.push_back({p.x0_l, p.c});
  }
  return out;
}

}  // namespace lindpo
