// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lindpo/data_io.hpp"
#include "lindpo/dynamics.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/objectives.hpp"
#include "lindpo/rng.hpp"
#include "lindpo/schedules.hpp"

namespace lindpo {

enum class Method { LinearDpo, Dpo, Sft };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::LinearDpo: return "linear-dpo";
    case Method::Dpo: return "dpo";
    case Method::Sft: return "sft";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "linear-dpo") return Method::LinearDpo;
  if (s == "dpo") return Method::Dpo;
  if (s == "sft") return Method::Sft;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected linear-dpo, dpo or sft)");
}

/// Everything a run needs besides the data and the starting model.
struct TrainConfig {
  Method method = Method::LinearDpo;
  DpoConfig dpo{};
  AdamHparams adam{};
  int warmup_steps = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  // Periodic evaluation.
  std::size_t eval_pairs = 512;
  std::size_t eval_samples = 512;
  int eval_draws = 16;
  int sample_steps = 50;
  SampleMode eval_mode = SampleMode::ODE;
  std::optional<ToyTaskSpec> task;  // needed for pref_mass
};

struct TrainState {
  std::int64_t step = 0;
  MlpModel policy;
  MlpModel ref;
  OptimizerState optimizer;
  std::uint64_t rng_seed = 0;
  DpoConfig cfg{};
  Method method = Method::LinearDpo;
  int warmup_steps = 200;
};

/// Policy and reference both start from `init`.
inline TrainState init_state(const MlpModel& init, const TrainConfig& cfg) {
  validate(cfg.dpo);
  return {0, init, init, make_optimizer(init.param_count(), cfg.adam), cfg.seed, cfg.dpo, cfg.method, cfg.warmup_steps};
}

struct MetricsRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double implicit_acc = 0.5;
  double mean_delta = 0.0;
  double mean_weight = 0.0;
  std::optional<double> pref_mass;
};

/// θ_ref ← γ·θ_ref + (1−γ)·θ.
inline void ema_update(MlpModel& ref, const MlpModel& policy, double gamma) {
  if (!ref.same_architecture(policy)) throw ContractError("ema_update: architectures differ");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("ema_update: gamma must lie in [0, 1]");
  if (gamma == 1.0) return;
  if (gamma == 0.0) {
    ref.params = policy.params;
    return;
  }
  const double take = 1.0 - gamma;
  for (std::size_t i = 0; i < ref.params.size(); ++i) ref.params[i] += take * (policy.params[i] - ref.params[i]);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double warmup_scale(std::int64_t step, int warmup_steps) {
  if (warmup_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup_steps));
}

inline LossReport batch_loss(const TrainState& state, std::span<const PreferencePair> batch, const Schedule& schedule,
                             std::span<const NoiseDraw> draws, bool with_grad) {
  const Objective obj = state.method == Method::LinearDpo ? Objective::LinearDpo
                        : state.method == Method::Dpo     ? Objective::SigmoidDpo
                                                          : Objective::Sft;
  return detail::evaluate(state.policy, state.ref, batch, state.cfg, schedule, draws, obj, with_grad);
}

/// One iteration: draw (t, εʷ, εˡ) per pair, evaluate the loss with reference
/// predictions taken off-tape, take one optimizer step, then move the reference.
/// Metrics describe the margins before the update.
inline MetricsRow train_step(TrainState& state, std::span<const PreferencePair> batch, const Schedule& schedule) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  Rng rng{state.rng_seed, stream::kNoise, static_cast<std::uint64_t>(state.step)};
  const auto draws = draw_noise(rng, batch.size(), state.policy.data_dim(), schedule, state.cfg);
  const LossReport report = batch_loss(state, batch, schedule, draws, true);

  bool finite = std::isfinite(report.loss);
  for (double g : report.grad) finite = finite && std::isfinite(g);
  if (!finite)
    throw TrainingError("non-finite loss or gradient at step " + std::to_string(state.step) + " (loss " +
                        format_double(report.loss) + ", mean margin " + format_double(mean_of(report.deltas)) + ")");

  optimizer_step(state.policy.params, report.grad, state.optimizer, warmup_scale(state.step, state.warmup_steps));
  ema_update(state.ref, state.policy, state.cfg.gamma_ema);
  ++state.step;

  return {state.step, report.loss, implicit_accuracy(report.deltas), mean_of(report.deltas), mean_of(report.weights),
          std::nullopt};
}

/// Batch indices for a step, drawn with replacement from (seed, step).
inline std::vector<PreferencePair> draw_batch(std::span<const PreferencePair> dataset, std::size_t batch_size,
                                              std::uint64_t seed, std::int64_t step) {
  Rng rng{seed, stream::kBatch, static_cast<std::uint64_t>(step)};
  std::vector<PreferencePair> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i)
    batch.push_back(dataset[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(dataset.size()) - 1))]);
  return batch;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double implicit_acc = 0.5;
  double mean_delta = 0.0;
  double mean_weight = 0.0;
  double pref_mass = std::numeric_limits<double>::quiet_NaN();
};

/// Margins on a fixed eval subset plus pref_mass of policy samples under the
/// first preferred condition. Each pair's margin is the mean of Δ𝒟 over
/// `eval_draws` fixed (t, ε) draws; mean_weight averages the per-draw weights.
inline EvalReport evaluate_state(const TrainState& state, std::span<const PreferencePair> dataset,
                                 const TrainConfig& cfg, const Schedule& schedule) {
  EvalReport r;
  const std::size_t n = std::min(cfg.eval_pairs, dataset.size());
  const int k = std::max(cfg.eval_draws, 1);
  if (n > 0) {
    std::vector<double> deltas(n, 0.0);
    double weight_sum = 0.0;
    for (int d = 0; d < k; ++d) {
      Rng rng{state.rng_seed, stream::kEval, 2, static_cast<std::uint64_t>(d)};
      const auto draws = draw_noise(rng, n, state.policy.data_dim(), schedule, state.cfg);
      const LossReport rep = batch_loss(state, dataset.first(n), schedule, draws, false);
      for (std::size_t i = 0; i < n; ++i) deltas[i] += rep.deltas[i] / k;
      weight_sum += mean_of(rep.weights);
    }
    r.implicit_acc = implicit_accuracy(deltas);
    r.mean_delta = mean_of(deltas);
    r.mean_weight = weight_sum / k;
  }
  if (cfg.task && cfg.eval_samples > 0) {
    const Vec c = one_hot(cfg.task->cond_dim, 0);
    const auto samples = sample_many(state.policy, schedule, state.cfg.kind, c, cfg.eval_samples, cfg.sample_steps,
                                     cfg.eval_mode, derive_key({state.rng_seed, stream::kEval, 1}));
    r.pref_mass = pref_mass(samples, *cfg.task, c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// State checkpoints

inline ordered_json dpo_config_to_json(const DpoConfig& c) {
  ordered_json j;
  j["beta_bar"] = c.beta_bar;
  j["lambda_mode"] = to_string(c.lambda_mode);
  j["prediction"] = to_string(c.kind);
  j["utility"] = to_string(c.utility.kind);
  j["slope"] = c.utility.slope;
  j["intercept"] = c.utility.intercept;
  j["eta"] = c.utility.floor_eta;
  j["ceil"] = c.utility.ceil;
  j["norm_window"] = c.utility.norm_window;
  j["gamma"] = c.gamma_ema;
  j["T_steps"] = c.T_steps;
  j["shared_noise"] = c.shared_noise;
  return j;
}

inline DpoConfig dpo_config_from_json(const json& j) {
  DpoConfig c;
  c.beta_bar = j.at("beta_bar").get<double>();
  c.lambda_mode = parse_lambda_mode(j.at("lambda_mode").get<std::string>());
  c.kind = parse_prediction_kind(j.at("prediction").get<std::string>());
  c.utility.kind = parse_utility(j.at("utility").get<std::string>());
  c.utility.slope = j.at("slope").get<double>();
  c.utility.intercept = j.at("intercept").get<double>();
  c.utility.floor_eta = j.at("eta").get<double>();
  c.utility.ceil = j.at("ceil").get<double>();
  c.utility.norm_window = j.at("norm_window").get<double>();
  c.gamma_ema = j.at("gamma").get<double>();
  c.T_steps = j.at("T_steps").get<int>();
  c.shared_noise = j.at("shared_noise").get<bool>();
  return c;
}

/// Policy checkpoint plus optimizer moments and a "train" block with the
/// reference parameters, step counter and configuration.
inline ordered_json state_to_json(const TrainState& s) {
  ordered_json j = model_to_json(s.policy);
  j["optimizer"] = optimizer_to_json(s.optimizer);
  ordered_json t;
  t["step"] = s.step;
  t["method"] = to_string(s.method);
  t["rng_seed"] = s.rng_seed;
  t["warmup_steps"] = s.warmup_steps;
  t["dpo"] = dpo_config_to_json(s.cfg);
  t["ref_layers"] = layers_to_json(s.ref);
  j["train"] = std::move(t);
  return j;
}

inline TrainState state_from_json(const json& j) {
  TrainState s;
  s.policy = model_from_json(j);
  if (!j.contains("train") || !j.contains("optimizer")) throw ConfigError("checkpoint has no training state");
  const json& t = j.at("train");
  s.optimizer = optimizer_from_json(j.at("optimizer"));
  if (s.optimizer.first_moment.size() != s.policy.param_count() ||
      s.optimizer.second_moment.size() != s.policy.param_count())
    throw ConfigError("checkpoint: optimizer moments do not match the parameters");
  s.step = t.at("step").get<std::int64_t>();
  s.method = parse_method(t.at("method").get<std::string>());
  s.rng_seed = t.at("rng_seed").get<std::uint64_t>();
  s.warmup_steps = t.at("warmup_steps").get<int>();
  s.cfg = dpo_config_from_json(t.at("dpo"));
  s.ref = s.policy;
  layers_from_json(t.at("ref_layers"), s.ref);
  return s;
}

inline void save_state(const std::filesystem::path& path, const TrainState& s) { write_json_file(path, state_to_json(s)); }
inline TrainState load_state(const std::filesystem::path& path) { return state_from_json(read_json_file(path)); }

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%08lld.json", static_cast<long long>(step));
  return dir / name;
}

inline std::string metrics_line(const MetricsRow& r) {
  return std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.implicit_acc) + "," +
         format_double(r.mean_delta) + "," + format_double(r.mean_weight) + "," +
         format_double(r.pref_mass.value_or(std::numeric_limits<double>::quiet_NaN()));
}

/// Creates `dir` and checks that files can be written there.
inline void ensure_writable_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
};

/// Trains from `start` up to `total_steps`, evaluating every `eval_every` steps
/// and at the end. Writes metrics.csv and ckpt_<step>.json files into `out_dir`.
/// A start state with step > 0 resumes: metrics are appended and the trajectory
/// matches the uninterrupted run bit for bit.
inline RunResult train_run(const TrainConfig& cfg, const Schedule& schedule, std::span<const PreferencePair> dataset,
                           std::int64_t total_steps, std::int64_t eval_every, const std::filesystem::path& out_dir,
                           TrainState start) {
  ensure_writable_dir(out_dir);
  if (dataset.empty()) throw ContractError("train_run: empty dataset");
  validate(start.cfg);
  check_pairing(start.cfg.kind, schedule);

  const auto metrics_path = out_dir / "metrics.csv";
  const bool fresh = start.step == 0 || !std::filesystem::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh ? std::ios::binary | std::ios::trunc : std::ios::binary | std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  if (fresh) metrics << kMetricsHeader << '\n';
  metrics.flush();

  RunResult result{std::move(start), {}};
  TrainState& state = result.state;
  if (state.step == 0) save_state(checkpoint_path(out_dir, 0), state);

  while (state.step < total_steps) {
    const auto batch = draw_batch(dataset, cfg.batch_size, state.rng_seed, state.step);
    MetricsRow row = train_step(state, batch, schedule);
    const bool eval_point = (eval_every > 0 && state.step % eval_every == 0) || state.step == total_steps;
    if (!eval_point) continue;
    const EvalReport ev = evaluate_state(state, dataset, cfg, schedule);
    row.implicit_acc = ev.implicit_acc;
    row.mean_delta = ev.mean_delta;
    row.mean_weight = ev.mean_weight;
    if (!std::isnan(ev.pref_mass)) row.pref_mass = ev.pref_mass;
    metrics << metrics_line(row) << '\n';
    metrics.flush();
    if (!metrics) throw IoError("write failed for " + metrics_path.string());
    save_state(checkpoint_path(out_dir, state.step), state);
    result.metrics.push_back(row);
  }
  return result;
}

struct SftResult {
  MlpModel model;
  std::vector<double> losses;  // one per step
};

/// Plain regression on `samples` (the winners, or any sample set acting as the
/// base distribution). Writes final.json into `out_dir` when one is given.
inline SftResult train_sft(const TrainConfig& cfg, const Schedule& schedule, std::span<const Sample> samples,
                           std::int64_t total_steps, MlpModel init,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  if (out_dir) ensure_writable_dir(*out_dir);
  if (samples.empty()) throw ContractError("train_sft: no samples");
  check_pairing(cfg.dpo.kind, schedule);
  SftResult r{std::move(init), {}};
  OptimizerState opt = make_optimizer(r.model.param_count(), cfg.adam);
  r.losses.reserve(static_cast<std::size_t>(std::max<std::int64_t>(total_steps, 0)));
  std::vector<Sample> batch(cfg.batch_size);
  for (std::int64_t step = 0; step < total_steps; ++step) {
    Rng pick{cfg.seed, stream::kBatch, static_cast<std::uint64_t>(step)};
    for (auto& s : batch)
      s = samples[static_cast<std::size_t>(pick.integer(0, static_cast<std::int64_t>(samples.size()) - 1))];
    Rng rng{cfg.seed, stream::kNoise, static_cast<std::uint64_t>(step)};
    const auto draws = draw_noise(rng, batch.size(), r.model.data_dim(), schedule, cfg.dpo);
    const GradResult g = sft_loss_grad(r.model, batch, cfg.dpo.kind, schedule, draws);
    if (!std::isfinite(g.loss)) throw TrainingError("non-finite SFT loss at step " + std::to_string(step));
    optimizer_step(r.model.params, g.grad, opt, warmup_scale(step, cfg.warmup_steps));
    r.losses.push_back(g.loss);
  }
  if (out_dir) save_model(*out_dir / "final.json", r.model);
  return r;
}

}  // namespace lindpo
