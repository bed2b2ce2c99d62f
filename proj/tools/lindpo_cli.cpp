// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: verify, gen-data, train, sample, eval, plot.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lindpo/lindpo.hpp"

namespace {

using namespace lindpo;

constexpr int kOk = 0;
constexpr int kCheckFailure = 1;
constexpr int kConfigError = 2;
constexpr int kIoError = 3;

RunConfig load_config(const std::string& path, bool paper_hparams) {
  if (path.empty()) return run_config_from_json(json::object(), paper_hparams);
  return load_run_config(path, paper_hparams);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Model plus whatever training state the file carries.
struct LoadedCheckpoint {
  MlpModel policy;
  std::optional<TrainState> state;
};

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const json j = read_json_file(path);
  LoadedCheckpoint ck{model_from_json(j), std::nullopt};
  if (j.contains("train")) ck.state = state_from_json(j);
  return ck;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string filter;
  std::string mutate;
};

int cmd_verify(const VerifyArgs& a) {
  verify::Options opt;
  if (a.mutate == "dpo-weight-sign")
    opt.dpo_weight = [](double delta, double beta_bar) { return beta_bar * sigmoid(-beta_bar * delta); };
  else if (!a.mutate.empty())
    throw ConfigError("unknown mutation '" + a.mutate + "'");
  const auto results = verify::run_checks(a.filter, opt);
  if (results.empty()) throw ConfigError("no check matches filter '" + a.filter + "'");
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-22s %s  %7.2fs  %s\n", r.name.c_str(), r.result.passed ? "PASS" : "FAIL", r.seconds,
                r.result.detail.c_str());
    all = all && r.result.passed;
  }
  std::printf("%zu checks, %s\n", results.size(), all ? "all passed" : "FAILURES");
  return all ? kOk : kCheckFailure;
}

struct GenArgs {
  std::string config;
  std::string modes;
  std::optional<std::size_t> pairs;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  RunConfig rc = load_config(a.config, false);
  if (!a.modes.empty()) rc.modes = a.modes;
  if (a.pairs) rc.pairs = *a.pairs;
  const ToyTaskSpec spec = rc.task(a.seed);
  save_dataset(a.out, gen_dataset(spec));
  std::printf("wrote %zu pairs to %s\n", spec.pairs, a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string method;
  std::string config;
  std::int64_t steps = 0;
  std::string out;
  std::uint64_t seed = 0;
  std::string data;
  std::string init;
  std::string resume;
  std::optional<std::int64_t> eval_every;
  bool paper_hparams = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = load_config(a.config, a.paper_hparams);
  const Method method = parse_method(a.method);
  if (a.steps < 0) throw ConfigError("--steps must be non-negative");
  const Schedule schedule = rc.make_schedule();
  TrainConfig cfg = rc.train_config(method, a.seed);

  const std::string data_path = a.data.empty() ? rc.data : a.data;
  const auto dataset = data_path.empty() ? gen_dataset(*cfg.task) : load_dataset(data_path);
  if (dataset.empty()) throw ConfigError("dataset is empty");

  TrainState state;
  if (!a.resume.empty()) {
    state = load_state(a.resume);
    if (state.method != method) throw ConfigError("--method differs from the resumed checkpoint");
  } else {
    const std::string init_path = a.init.empty() ? rc.init : a.init;
    const MlpModel init = init_path.empty() ? mlp_init(rc.layer_dims, rc.activation, a.seed, rc.time_embedding)
                                            : load_checkpoint(init_path).policy;
    if (init.data_dim() != cfg.task->data_dim() || init.cond_dim() != cfg.task->cond_dim)
      throw ConfigError("model dimensions do not match the task");
    state = init_state(init, cfg);
  }
  const auto result = train_run(cfg, schedule, dataset, a.steps, a.eval_every.value_or(rc.eval_every), a.out,
                                std::move(state));
  save_state(std::filesystem::path(a.out) / "final.json", result.state);
  if (!result.metrics.empty()) {
    const MetricsRow& r = result.metrics.back();
    std::printf("step %lld  loss %s  implicit_acc %s  pref_mass %s\n", static_cast<long long>(r.step),
                format_double(r.loss).c_str(), format_double(r.implicit_acc).c_str(),
                r.pref_mass ? format_double(*r.pref_mass).c_str() : "nan");
  }
  return kOk;
}

struct SampleArgs {
  std::string ckpt;
  std::string config;
  std::size_t n = 0;
  int steps = 50;
  std::string mode = "ode";
  std::uint64_t seed = 0;
  std::size_t cond = 0;
  std::string out;
};

int cmd_sample(const SampleArgs& a) {
  const RunConfig rc = load_config(a.config, false);
  const Schedule schedule = rc.make_schedule();
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const PredictionKind kind = ck.state ? ck.state->cfg.kind : rc.dpo.kind;
  const std::size_t cond_dim = ck.policy.cond_dim();
  if (cond_dim > 0 && a.cond >= cond_dim) throw ConfigError("--cond exceeds the condition dimension");
  const Vec c = cond_dim > 0 ? one_hot(cond_dim, a.cond) : Vec{};
  const auto samples =
      sample_many(ck.policy, schedule, kind, c, a.n, a.steps, parse_sample_mode(a.mode), a.seed);

  std::string text;
  for (std::size_t d = 0; d < ck.policy.data_dim(); ++d) text += (d ? ",x" : "x") + std::to_string(d);
  text += '\n';
  for (const auto& s : samples) {
    for (std::size_t d = 0; d < s.size(); ++d) text += (d ? "," : "") + format_double(s[d]);
    text += '\n';
  }
  if (a.out.empty()) std::fwrite(text.data(), 1, text.size(), stdout);
  else write_text(a.out, text);
  return kOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string config;
  std::size_t n = 512;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig rc = load_config(a.config, false);
  const Schedule schedule = rc.make_schedule();
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const auto dataset = load_dataset(a.data);
  TrainConfig cfg = rc.train_config(Method::LinearDpo, a.seed);
  cfg.eval_pairs = a.n;
  cfg.eval_samples = a.n;
  TrainState state = ck.state ? *ck.state : init_state(ck.policy, cfg);
  state.rng_seed = a.seed;
  const EvalReport ev = evaluate_state(state, dataset, cfg, schedule);
  ordered_json report;
  report["pref_mass"] = ev.pref_mass;
  report["implicit_acc"] = dataset.empty() ? json(nullptr) : json(ev.implicit_acc);
  std::printf("%s\n", report.dump().c_str());
  return kOk;
}

struct PlotArgs {
  std::string metrics;
  std::string out;
  bool utilities = false;
};

int cmd_plot(const PlotArgs& a) {
  if (a.utilities == !a.metrics.empty()) throw ConfigError("plot needs exactly one of --metrics or --utilities");
  write_text(a.out, a.utilities ? plot::utility_svg() : plot::metrics_svg(read_csv(a.metrics)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear-DPO laboratory on low-dimensional synthetic data"};
  app.require_subcommand(1);

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "run the built-in property checks");
  verify->add_option("--filter", va.filter, "only checks whose name contains this text");
  verify->add_option("--mutate", va.mutate, "inject a known fault (dpo-weight-sign)");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "generate preference pairs for the toy task");
  gen->add_option("--config", ga.config, "run config (JSON)");
  gen->add_option("--modes", ga.modes, "x,y,std,pref;... mode list");
  gen->add_option("--pairs", ga.pairs, "number of pairs");
  gen->add_option("--seed", ga.seed, "random seed")->required();
  gen->add_option("--out", ga.out, "output .jsonl")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a policy");
  train->add_option("--method", ta.method, "linear-dpo, dpo or sft")->required();
  train->add_option("--config", ta.config, "run config (JSON)");
  train->add_option("--steps", ta.steps, "total optimizer steps")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--seed", ta.seed, "random seed")->required();
  train->add_option("--data", ta.data, "dataset .jsonl (default: generated from the config)");
  train->add_option("--init", ta.init, "starting model or checkpoint");
  train->add_option("--resume", ta.resume, "continue from a training checkpoint");
  train->add_option("--eval-every", ta.eval_every, "evaluation interval in steps");
  train->add_flag("--paper-hparams", ta.paper_hparams, "use the large-model learning rate 5e-6 as default");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--ckpt", sa.ckpt, "model or checkpoint")->required();
  sample->add_option("--config", sa.config, "run config (JSON)");
  sample->add_option("--n", sa.n, "number of samples")->required();
  sample->add_option("--steps", sa.steps, "integration steps");
  sample->add_option("--mode", sa.mode, "ode or sde");
  sample->add_option("--seed", sa.seed, "random seed")->required();
  sample->add_option("--cond", sa.cond, "index of the preferred-mode condition");
  sample->add_option("--out", sa.out, "output CSV (default stdout)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "report pref_mass and implicit accuracy");
  eval->add_option("--ckpt", ea.ckpt, "model or checkpoint")->required();
  eval->add_option("--data", ea.data, "dataset .jsonl")->required();
  eval->add_option("--config", ea.config, "run config (JSON)");
  eval->add_option("--n", ea.n, "samples and pairs to evaluate");
  eval->add_option("--seed", ea.seed, "random seed");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "render metrics or utility curves as SVG");
  plot->add_option("--metrics", pa.metrics, "metrics.csv");
  plot->add_flag("--utilities", pa.utilities, "plot the five normalized utilities");
  plot->add_option("--out", pa.out, "output .svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*verify) return cmd_verify(va);
    if (*gen) return cmd_gen_data(ga);
    if (*train) return cmd_train(ta);
    if (*sample) return cmd_sample(sa);
    if (*eval) return cmd_eval(ea);
    if (*plot) return cmd_plot(pa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailure;
  }
  return kOk;
}
