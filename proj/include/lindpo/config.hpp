// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lindpo/data_io.hpp"
#include "lindpo/dynamics.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/objectives.hpp"
#include "lindpo/schedules.hpp"
#include "lindpo/training.hpp"

namespace lindpo {

/// Flat run configuration. Every key is optional; missing keys keep these defaults.
struct RunConfig {
  // schedule
  Paradigm schedule = Paradigm::RF;
  double sampling_g_scale = 1.0;
  double t_min = 1e-3;
  double ve_power = 0.5;
  std::optional<PredictionKind> prediction;

  // objective
  DpoConfig dpo{};

  // optimizer and loop
  AdamHparams adam{};
  int warmup_steps = 200;
  std::size_t batch_size = 64;
  std::int64_t eval_every = 200;

  // model
  std::vector<std::size_t> layer_dims{6, 64, 64, 2};
  Activation activation = Activation::SiLU;
  TimeEmbedding time_embedding = TimeEmbedding::Fourier;

  // task
  std::string modes = "2,0,0.3,1;-2,0,0.3,0";
  std::size_t pairs = 4096;
  double label_flip_prob = 0.0;

  // evaluation
  std::size_t eval_pairs = 512;
  std::size_t eval_samples = 512;
  int eval_draws = 16;
  int sample_steps = 50;
  SampleMode eval_mode = SampleMode::ODE;

  // paths
  std::string data;
  std::string init;

  Schedule make_schedule() const {
    switch (schedule) {
      case Paradigm::VP: return Schedule::vp(sampling_g_scale, t_min);
      case Paradigm::VE: return Schedule::ve(ve_power, sampling_g_scale, t_min);
      case Paradigm::RF: break;
    }
    return Schedule::rf(sampling_g_scale, t_min);
  }

  ToyTaskSpec task(std::uint64_t seed) const {
    ToyTaskSpec spec;
    spec.modes = parse_modes(modes);
    spec.cond_dim = spec.preferred_indices().size();
    spec.pairs = pairs;
    spec.seed = seed;
    spec.label_flip_prob = label_flip_prob;
    validate(spec);
    return spec;
  }

  TrainConfig train_config(Method method, std::uint64_t seed) const {
    TrainConfig c;
    c.method = method;
    c.dpo = dpo;
    c.adam = adam;
    c.warmup_steps = warmup_steps;
    c.batch_size = batch_size;
    c.seed = seed;
    c.eval_pairs = eval_pairs;
    c.eval_samples = eval_samples;
    c.eval_draws = eval_draws;
    c.sample_steps = sample_steps;
    c.eval_mode = eval_mode;
    c.task = task(seed);
    return c;
  }
};

namespace detail {

inline double config_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("config key '" + key + "' must be finite");
  return x;
}

inline std::int64_t config_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::size_t config_count(const json& v, const std::string& key) {
  const std::int64_t n = config_int(v, key);
  if (n < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(n);
}

inline std::string config_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

inline bool config_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

}  // namespace detail

/// Cross-field checks, run before any compute.
inline void validate(const RunConfig& rc) {
  if (!(rc.t_min > 0.0 && rc.t_min < 0.5)) throw ConfigError("t_min must lie in (0, 0.5)");
  if (!(rc.sampling_g_scale >= 0.0)) throw ConfigError("sampling_g_scale must be non-negative");
  if (!(rc.ve_power > 0.0)) throw ConfigError("ve_power must be positive");
  validate(rc.dpo);
  const Schedule schedule = rc.make_schedule();
  check_pairing(rc.dpo.kind, schedule);
  if (!(rc.adam.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(rc.adam.beta1 >= 0.0 && rc.adam.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(rc.adam.beta2 >= 0.0 && rc.adam.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(rc.adam.eps > 0.0)) throw ConfigError("eps_opt must be positive");
  if (!(rc.adam.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (rc.warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (rc.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (rc.eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (rc.eval_draws < 1) throw ConfigError("eval_draws must be at least 1");
  if (rc.sample_steps < 1) throw ConfigError("sample_steps must be at least 1");
  validate_dims(rc.layer_dims, rc.time_embedding);

  const ToyTaskSpec spec = rc.task(0);
  const std::size_t expected_in = spec.data_dim() + time_feature_count(rc.time_embedding) + spec.cond_dim;
  if (rc.layer_dims.front() != expected_in)
    throw ConfigError("layer_dims[0] must be " + std::to_string(expected_in) +
                      " (data dim + time features + condition dim)");
  if (rc.layer_dims.back() != spec.data_dim()) throw ConfigError("last layer must equal the data dimension");
}

/// Parses a flat JSON object. Unknown keys and ill-typed values are rejected.
/// `paper_hparams` switches the learning-rate default to 5e-6.
inline RunConfig run_config_from_json(const json& j, bool paper_hparams = false) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig rc;
  if (paper_hparams) rc.adam.lr = 5e-6;

  for (const auto& [key, v] : j.items()) {
    if (key == "schedule") rc.schedule = parse_paradigm(config_string(v, key));
    else if (key == "sampling_g_scale") rc.sampling_g_scale = config_number(v, key);
    else if (key == "t_min") rc.t_min = config_number(v, key);
    else if (key == "ve_power") rc.ve_power = config_number(v, key);
    else if (key == "prediction") rc.prediction = parse_prediction_kind(config_string(v, key));
    else if (key == "beta_bar") rc.dpo.beta_bar = config_number(v, key);
    else if (key == "lambda_mode") rc.dpo.lambda_mode = parse_lambda_mode(config_string(v, key));
    else if (key == "utility") rc.dpo.utility.kind = parse_utility(config_string(v, key));
    else if (key == "eta") rc.dpo.utility.floor_eta = config_number(v, key);
    else if (key == "slope") rc.dpo.utility.slope = config_number(v, key);
    else if (key == "intercept") rc.dpo.utility.intercept = config_number(v, key);
    else if (key == "norm_window") rc.dpo.utility.norm_window = config_number(v, key);
    else if (key == "gamma") rc.dpo.gamma_ema = config_number(v, key);
    else if (key == "T_steps") rc.dpo.T_steps = static_cast<int>(config_int(v, key));
    else if (key == "shared_noise") rc.dpo.shared_noise = config_bool(v, key);
    else if (key == "lr") rc.adam.lr = config_number(v, key);
    else if (key == "beta1") rc.adam.beta1 = config_number(v, key);
    else if (key == "beta2") rc.adam.beta2 = config_number(v, key);
    else if (key == "eps_opt") rc.adam.eps = config_number(v, key);
    else if (key == "weight_decay") rc.adam.weight_decay = config_number(v, key);
    else if (key == "warmup_steps") rc.warmup_steps = static_cast<int>(config_int(v, key));
    else if (key == "batch_size") rc.batch_size = config_count(v, key);
    else if (key == "eval_every") rc.eval_every = config_int(v, key);
    else if (key == "layer_dims") {
      if (!v.is_array()) throw ConfigError("config key 'layer_dims' must be an array");
      rc.layer_dims.clear();
      for (const auto& d : v) rc.layer_dims.push_back(config_count(d, key));
    } else if (key == "activation") rc.activation = parse_activation(config_string(v, key));
    else if (key == "time_embedding") rc.time_embedding = parse_time_embedding(config_string(v, key));
    else if (key == "modes") rc.modes = config_string(v, key);
    else if (key == "pairs") rc.pairs = config_count(v, key);
    else if (key == "label_flip_prob") rc.label_flip_prob = config_number(v, key);
    else if (key == "eval_pairs") rc.eval_pairs = config_count(v, key);
    else if (key == "eval_samples") rc.eval_samples = config_count(v, key);
    else if (key == "eval_draws") rc.eval_draws = static_cast<int>(config_int(v, key));
    else if (key == "sample_steps") rc.sample_steps = static_cast<int>(config_int(v, key));
    else if (key == "eval_mode") rc.eval_mode = parse_sample_mode(config_string(v, key));
    else if (key == "data") rc.data = config_string(v, key);
    else if (key == "init") rc.init = config_string(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  rc.dpo.kind = rc.prediction.value_or(default_kind(rc.schedule));
  validate(rc);
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path, bool paper_hparams = false) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, paper_hparams);
}

}  // namespace lindpo
