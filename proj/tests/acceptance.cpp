// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit 1 on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "lindpo/lindpo.hpp"

namespace {

using namespace lindpo;

struct Verdict {
  bool pass;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> run;
};

std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Oracles

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// x_t = (1−t)x0 + tε, target ε − x0.
struct RfPoint {
  std::vector<double> x_t, y;
};

RfPoint rf_point(const std::vector<double>& x0, const std::vector<double>& eps, double t) {
  RfPoint p{std::vector<double>(x0.size()), std::vector<double>(x0.size())};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    p.x_t[i] = (1 - t) * x0[i] + t * eps[i];
    p.y[i] = eps[i] - x0[i];
  }
  return p;
}

double sq_err(const MlpModel& m, const RfPoint& p, double t, const std::vector<double>& c) {
  const auto out = mlp_forward(m, p.x_t, t, c);
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += (p.y[i] - out[i]) * (p.y[i] - out[i]);
  return s;
}

// Exact RF weighting with g² = t: (1/(2g²))·(1 + g²(1−t)/(2t))².
double rf_lambda(double t) {
  const double g2 = t;
  const double k = 1 + g2 * (1 - t) / (2 * t);
  return k * k / (2 * g2);
}

struct Draw {
  MlpModel policy, ref;
  std::vector<PreferencePair> pairs;
  std::vector<NoiseDraw> noise;
};

// MLPs with Raw time features and a scalar condition, widths cycling up to (4,16,16,2).
Draw random_draw(std::uint64_t seed, std::size_t n_pairs) {
  static const std::vector<std::vector<std::size_t>> shapes = {{4, 8, 2}, {4, 16, 2}, {4, 8, 8, 2}, {4, 16, 16, 2}};
  Draw d{mlp_init(shapes[seed % shapes.size()], seed % 2 ? Activation::Tanh : Activation::SiLU, 1000 + seed,
                  TimeEmbedding::Raw),
         {},
         {},
         {}};
  Rng rng{seed, 0xACCE};
  d.ref = d.policy;
  for (double& p : d.ref.params) p += 0.03 * rng.normal();
  for (std::size_t i = 0; i < n_pairs; ++i) {
    d.pairs.push_back({rng.normal_vector(2), rng.normal_vector(2), {rng.uniform(-1, 1)}});
    d.noise.push_back({rng.uniform(0.05, 0.95), rng.normal_vector(2), rng.normal_vector(2)});
  }
  return d;
}

double oracle_delta(const Draw& d, std::size_t i) {
  const auto& p = d.pairs[i];
  const auto& n = d.noise[i];
  const RfPoint w = rf_point(p.x0_w, n.eps_w, n.t), l = rf_point(p.x0_l, n.eps_l, n.t);
  return (sq_err(d.policy, w, n.t, p.c) - sq_err(d.ref, w, n.t, p.c)) -
         (sq_err(d.policy, l, n.t, p.c) - sq_err(d.ref, l, n.t, p.c));
}

// ∇_θ(‖yʷ − y_θ(x_tʷ)‖² − ‖yˡ − y_θ(x_tˡ)‖²) for one pair.
std::vector<double> residual_gap_grad(const Draw& d, std::size_t i) {
  const auto& p = d.pairs[i];
  const auto& n = d.noise[i];
  const RfPoint w = rf_point(p.x0_w, n.eps_w, n.t), l = rf_point(p.x0_l, n.eps_l, n.t);
  return grad_loss(d.policy, [&](ad::Tape& tape, const MlpVars& vars) {
           auto err = [&](const RfPoint& q) {
             return tape.squared_norm(tape.sub(mlp_forward(tape, vars, q.x_t, n.t, p.c), tape.constant(q.y)));
           };
           return tape.sub(err(w), err(l));
         })
      .grad;
}

// 1D data N(0, s²) under the RF path; Var(x_t) and the Bayes velocity slope.
struct Gaussian1d {
  double s;
  double var(double t) const { return (1 - t) * (1 - t) * s * s + t * t; }
  double slope(double t) const { return (t - (1 - t) * s * s) / var(t); }
};

// ---------------------------------------------------------------------------
// Criteria 1–9

Verdict gradient_identity() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Draw d = random_draw(k, 1 + k % 3);
    DpoConfig cfg;
    cfg.beta_bar = 2.0 + k;
    cfg.lambda_mode = k % 2 ? LambdaMode::Exact : LambdaMode::Constant;
    const LossReport rep = dpo_unified_loss_grad(d.policy, d.ref, d.pairs, cfg, Schedule::rf(), d.noise);
    std::vector<double> hand(d.policy.param_count(), 0.0);
    for (std::size_t i = 0; i < d.pairs.size(); ++i) {
      const double lam = cfg.lambda_mode == LambdaMode::Exact ? rf_lambda(d.noise[i].t) : 1.0;
      const double bl = cfg.beta_bar * lam;
      const double scale = bl * logistic(bl * oracle_delta(d, i)) / d.pairs.size();
      const auto g = residual_gap_grad(d, i);
      for (std::size_t j = 0; j < hand.size(); ++j) hand[j] += scale * g[j];
    }
    worst = std::max(worst, max_rel(rep.grad, hand));
  }
  return {worst < 1e-4, "max rel err " + fmt("%.2e", worst)};
}

Verdict stop_gradient() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Draw d = random_draw(100 + k, 4);
    DpoConfig cfg;
    cfg.beta_bar = 25.0;
    const LossReport rep = linear_dpo_loss_grad(d.policy, d.ref, d.pairs, cfg, Schedule::rf(), d.noise);
    std::vector<double> weights;
    for (std::size_t i = 0; i < d.pairs.size(); ++i)
      weights.push_back(std::clamp(0.2 * cfg.beta_bar * oracle_delta(d, i) + 0.5, 1e-2, 1.0));
    auto frozen = [&](std::span<const double> theta) {
      Draw m = d;
      m.policy.params.assign(theta.begin(), theta.end());
      double s = 0.0;
      for (std::size_t i = 0; i < m.pairs.size(); ++i) {
        const auto& p = m.pairs[i];
        const auto& n = m.noise[i];
        s += weights[i] * (sq_err(m.policy, rf_point(p.x0_w, n.eps_w, n.t), n.t, p.c) -
                           sq_err(m.policy, rf_point(p.x0_l, n.eps_l, n.t), n.t, p.c));
      }
      return s / m.pairs.size();
    };
    std::vector<double> fd(d.policy.param_count());
    std::vector<double> theta = d.policy.params;
    const double h = 1e-5;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double orig = theta[j];
      theta[j] = orig + h;
      const double up = frozen(theta);
      theta[j] = orig - h;
      const double down = frozen(theta);
      theta[j] = orig;
      fd[j] = (up - down) / (2 * h);
    }
    worst = std::max(worst, max_rel(rep.grad, fd));
  }
  return {worst < 1e-4, "max rel err " + fmt("%.2e", worst)};
}

Verdict kl_closed_form() {
  Rng rng{31337};
  double worst = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    const std::vector<double> a{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const double angle = rng.uniform(0, 2 * std::numbers::pi), sep = rng.uniform(2, 4);
    const std::vector<double> b{a[0] + sep * std::cos(angle), a[1] + sep * std::sin(angle)};
    for (double s : {0.25, 1.0, 4.0}) {
      // E_{x∼p_a}[log p_a(x) − log p_b(x)] from full 2D Gaussian log densities.
      auto log_density = [&](const std::vector<double>& mu, double x, double y) {
        return -std::log(2 * std::numbers::pi * s) - ((x - mu[0]) * (x - mu[0]) + (y - mu[1]) * (y - mu[1])) / (2 * s);
      };
      const int n = 100000;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = a[0] + std::sqrt(s) * rng.normal(), y = a[1] + std::sqrt(s) * rng.normal();
        acc += log_density(a, x, y) - log_density(b, x, y);
      }
      const double exact = gaussian_kl_same_cov(a, b, s);
      worst = std::max(worst, std::abs(acc / n - exact) / exact);
    }
  }
  return {worst < 0.02, "max rel err " + fmt("%.2f%%", 100 * worst)};
}

Verdict rf_score_identity() {
  const Gaussian1d g{2.0};
  double worst_analytic = 0.0;
  for (double t : {0.2, 0.5, 0.8})
    for (double x : {-4.0, -1.3, 0.0, 0.7, 3.1}) {
      const auto score = score_from_velocity_rf(std::vector<double>{x}, t, std::vector<double>{g.slope(t) * x});
      worst_analytic = std::max(worst_analytic, std::abs(score[0] - (-x / g.var(t))));
    }
  Rng rng{404};
  double worst_trip = 0.0;
  const Schedule rf = Schedule::rf();
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.uniform(0.01, 0.99);
    const auto x = rng.normal_vector(3), v = rng.normal_vector(3);
    const auto back = velocity_from_score(x, t, score_from_velocity_rf(x, t, v), rf);
    for (int k = 0; k < 3; ++k) worst_trip = std::max(worst_trip, std::abs(back[k] - v[k]));
  }
  return {worst_analytic < 1e-10 && worst_trip < 1e-12,
          "analytic " + fmt("%.1e", worst_analytic) + ", round-trip " + fmt("%.1e", worst_trip)};
}

Verdict marginal_equivalence() {
  const Gaussian1d g{2.0};
  const Schedule rf = Schedule::rf();
  const int n = 10000;
  const double v = g.var(rf.t_lo());
  auto predict = [&](std::span<const double> x, double t, std::span<const double>) {
    return std::vector<double>{g.slope(t) * x[0]};
  };
  bool ok = true;
  std::string detail;
  for (SampleMode mode : {SampleMode::ODE, SampleMode::SDE}) {
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x =
          sample_with(predict, rf, PredictionKind::Velocity, {}, 1, 200, mode, 2718, static_cast<std::uint64_t>(i))[0];
      sum += x;
      sum_sq += x * x;
    }
    const double mean = sum / n, var = (sum_sq - n * mean * mean) / (n - 1);
    const double z_mean = std::abs(mean) / std::sqrt(v / n);
    const double z_var = std::abs(var - v) / (v * std::sqrt(2.0 / (n - 1)));
    ok = ok && z_mean < 4 && z_var < 4;
    detail += std::string(mode == SampleMode::ODE ? "ode" : "sde") + " mean " + fmt("%.2f", z_mean) + " SE, var " +
              fmt("%.2f", z_var) + " SE; ";
  }
  return {ok, detail.substr(0, detail.size() - 2)};
}

Verdict em_order() {
  const Gaussian1d g{2.0};
  const Schedule rf = Schedule::rf();
  auto predict = [&](std::span<const double> x, double t, std::span<const double>) {
    return std::vector<double>{g.slope(t) * x[0]};
  };
  const std::uint64_t seed = 6;
  Rng start{seed, stream::kSample, 0, 0};
  const double x_start = rf.coeffs(rf.t_hi()).sigma * start.normal();
  // dx/dt = slope(t)·x integrates to x ∝ √Var(x_t).
  const double exact = x_start * std::sqrt(g.var(rf.t_lo()) / g.var(rf.t_hi()));
  std::vector<double> err;
  for (int steps : {25, 50, 100, 200})
    err.push_back(std::abs(sample_with(predict, rf, PredictionKind::Velocity, {}, 1, steps, SampleMode::ODE, seed)[0] - exact));
  bool ok = true;
  std::string detail = "ratios";
  for (std::size_t i = 0; i + 1 < err.size(); ++i) {
    const double r = err[i] / err[i + 1];
    ok = ok && r >= 1.8 && r <= 2.2;
    detail += " " + fmt("%.3f", r);
  }
  return {ok, detail};
}

Verdict sustained_gradient() {
  DpoConfig cfg;
  cfg.beta_bar = 250.0;
  cfg.utility.floor_eta = 1e-2;
  const double delta = -0.05;
  const double sig = 1.0 / (1.0 + std::exp(12.5));
  const double lin = linear_dpo_weight(delta, cfg);
  const double lib_sig = dpo_gradient_weight(delta, cfg.beta_bar) / cfg.beta_bar;
  const bool ok = sig < lin && lin == 1e-2 && std::abs(lib_sig - sig) <= 1e-12 * sig;
  return {ok, "sigmoid " + fmt("%.3e", sig) + " < linear weight " + fmt("%g", lin)};
}

Verdict ema_geometry() {
  const MlpModel theta = mlp_init({6, 16, 2}, Activation::SiLU, 70);
  MlpModel ref = mlp_init({6, 16, 2}, Activation::SiLU, 71);
  auto dist = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < ref.params.size(); ++i)
      s += (ref.params[i] - theta.params[i]) * (ref.params[i] - theta.params[i]);
    return std::sqrt(s);
  };
  const double d0 = dist();
  for (int k = 0; k < 100; ++k) ema_update(ref, theta, 0.995);
  const double geo_err = std::abs(dist() - std::pow(0.995, 100) * d0);

  TrainConfig cfg;
  cfg.dpo.gamma_ema = 1.0;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.eval_pairs = 32;
  cfg.eval_samples = 0;
  cfg.eval_draws = 1;
  const auto data = gen_dataset(two_mode_task(256, 3));
  const MlpModel init = mlp_init({6, 16, 16, 2}, Activation::SiLU, 72);
  const auto dir = std::filesystem::temp_directory_path() / "lindpo_acceptance" / "ema";
  std::filesystem::remove_all(dir);
  const RunResult run = train_run(cfg, Schedule::rf(), data, 200, 50, dir, init_state(init, cfg));
  const bool frozen = run.state.ref.params == init.params && run.state.policy.params != init.params;
  return {geo_err < 1e-12 && frozen,
          "geometry err " + fmt("%.1e", geo_err) + ", gamma=1 reference " + (frozen ? "bit-identical" : "moved")};
}

Verdict utility_normalization() {
  bool ok = true;
  std::string bad;
  for (UtilityKind k : {UtilityKind::Sigmoid, UtilityKind::KT, UtilityKind::LossAverse, UtilityKind::RiskSeeking,
                        UtilityKind::Linear}) {
    UtilitySpec u;
    u.kind = k;
    u.norm_window = 5.0;
    if (normalize_utility(u, -5.0) != 0.0 || normalize_utility(u, 5.0) != 1.0) {
      ok = false;
      bad += std::string(to_string(k)) + " endpoints; ";
    }
  }
  for (UtilityKind k : {UtilityKind::KT, UtilityKind::Linear}) {
    UtilitySpec u;
    u.kind = k;
    if (normalize_utility(u, 0.0) != 0.5) {
      ok = false;
      bad += std::string(to_string(k)) + " midpoint; ";
    }
  }
  return {ok, ok ? "endpoints 0/1 and midpoints 0.5 exact" : bad};
}

// ---------------------------------------------------------------------------
// Criteria 10–11: toy alignment

// Calibration: SFT on every candidate for 3000 steps at lr 1e-3 gives the
// reference sampler; preference training then runs 2000 steps with eval every 200.
constexpr std::int64_t kSftSteps = 3000;
constexpr std::int64_t kPrefSteps = 2000;
constexpr double kLinearLr = 4e-4;
constexpr double kComparisonLr = 5e-3;
constexpr double kMinImplicitAcc = 0.9;
constexpr double kMinPrefMassGain = 0.20;

struct ToySetup {
  ToyTaskSpec task = two_mode_task(4096, 7);
  std::vector<PreferencePair> data = gen_dataset(task);
  Schedule schedule = Schedule::rf();
  MlpModel sft_model;

  TrainConfig config(Method method, double lr) const {
    TrainConfig cfg;
    cfg.method = method;
    cfg.seed = 11;
    cfg.adam.lr = lr;
    cfg.task = task;
    return cfg;
  }
};

ToySetup& toy() {
  static ToySetup setup = [] {
    ToySetup s;
    const TrainConfig cfg = s.config(Method::Sft, 1e-3);
    s.sft_model = train_sft(cfg, s.schedule, all_candidates(s.data), kSftSteps,
                            mlp_init({6, 64, 64, 2}, Activation::SiLU, 3))
                      .model;
    return s;
  }();
  return setup;
}

RunResult toy_run(Method method, double lr) {
  const ToySetup& s = toy();
  const TrainConfig cfg = s.config(method, lr);
  const auto dir = std::filesystem::temp_directory_path() / "lindpo_acceptance" /
                   (std::string(to_string(method)) + "_" + fmt("%g", lr));
  std::filesystem::remove_all(dir);
  return train_run(cfg, s.schedule, s.data, kPrefSteps, 200, dir, init_state(s.sft_model, cfg));
}

Verdict toy_alignment() {
  const ToySetup& s = toy();
  const TrainConfig cfg = s.config(Method::LinearDpo, kLinearLr);
  const double base = evaluate_state(init_state(s.sft_model, cfg), s.data, cfg, s.schedule).pref_mass;
  const RunResult run = toy_run(Method::LinearDpo, kLinearLr);
  const MetricsRow& last = run.metrics.back();
  const double gain = last.pref_mass.value_or(0.0) - base;
  return {last.implicit_acc >= kMinImplicitAcc && gain >= kMinPrefMassGain,
          "implicit_acc " + fmt("%.3f", last.implicit_acc) + ", pref_mass " + fmt("%.3f", base) + " -> " +
              fmt("%.3f", last.pref_mass.value_or(0.0)) + " (gain " + fmt("%.3f", gain) + ")"};
}

Verdict baseline_comparability() {
  const RunResult dpo = toy_run(Method::Dpo, kComparisonLr);
  const RunResult lin = toy_run(Method::LinearDpo, kComparisonLr);
  const DpoConfig defaults;
  const double eta = defaults.utility.floor_eta, threshold = eta * defaults.beta_bar;
  auto late_weight = [](const RunResult& r) {
    double s = 0.0;
    for (std::size_t i = r.metrics.size() - 3; i < r.metrics.size(); ++i) s += r.metrics[i].mean_weight;
    return s / 3;
  };
  bool completed = dpo.state.step == kPrefSteps && lin.state.step == kPrefSteps;
  double lin_min = std::numeric_limits<double>::infinity();
  for (const auto& row : lin.metrics) lin_min = std::min(lin_min, row.mean_weight);
  for (const auto* r : {&dpo, &lin})
    for (const auto& row : r->metrics) completed = completed && std::isfinite(row.loss);
  const double dpo_late = late_weight(dpo);
  return {completed && dpo_late < threshold && lin_min >= eta,
          "dpo late weight " + fmt("%.3g", dpo_late) + " < " + fmt("%g", threshold) + ", linear-dpo min weight " +
              fmt("%.3g", lin_min) + " >= " + fmt("%g", eta)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient identity", 10, gradient_identity},
      {2, "stop-gradient contract", 10, stop_gradient},
      {3, "KL closed form", 30, kl_closed_form},
      {4, "RF score-velocity identity", 1, rf_score_identity},
      {5, "velocity-SDE marginal equivalence", 60, marginal_equivalence},
      {6, "Euler-Maruyama order", 10, em_order},
      {7, "sustained-gradient separation", 1, sustained_gradient},
      {8, "EMA geometry", 5, ema_geometry},
      {9, "utility normalization", 1, utility_normalization},
      {10, "toy alignment", 300, toy_alignment},
      {11, "baseline comparability", 300, baseline_comparability},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs < c.budget_s;
    const bool pass = v.pass && in_budget;
    failures += pass ? 0 : 1;
    std::printf("criterion %2d %s  %-34s %7.2fs / %gs  %s%s\n", c.id, pass ? "PASS" : "FAIL", c.name, secs, c.budget_s,
                v.detail.c_str(), in_budget ? "" : "  [over time budget]");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
