// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/nn.hpp"
#include "lindpo/objectives.hpp"
#include "lindpo/rng.hpp"

namespace lindpo {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Synthetic preference task

struct Mode {
  Vec center;
  double std = 0.3;
  bool preferred = false;
};

struct ToyTaskSpec {
  std::vector<Mode> modes;
  std::size_t cond_dim = 1;  // one-hot over the preferred modes
  std::size_t pairs = 1000;
  std::uint64_t seed = 0;
  double label_flip_prob = 0.0;

  std::size_t data_dim() const { return modes.empty() ? 0 : modes.front().center.size(); }

  std::vector<std::size_t> preferred_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < modes.size(); ++i)
      if (modes[i].preferred) idx.push_back(i);
    return idx;
  }
};

/// Two modes at (±2, 0), std 0.3, (+2, 0) preferred.
inline ToyTaskSpec two_mode_task(std::size_t pairs = 4096, std::uint64_t seed = 0) {
  return {{{{2.0, 0.0}, 0.3, true}, {{-2.0, 0.0}, 0.3, false}}, 1, pairs, seed, 0.0};
}

inline void validate(const ToyTaskSpec& spec) {
  if (spec.modes.empty()) throw ConfigError("task needs at least one mode");
  const std::size_t dim = spec.data_dim();
  if (dim == 0) throw ConfigError("mode centers must be non-empty");
  std::size_t n_pref = 0;
  for (const Mode& m : spec.modes) {
    if (m.center.size() != dim) throw ConfigError("mode centers differ in dimension");
    if (!(m.std > 0.0)) throw ConfigError("mode std must be positive");
    n_pref += m.preferred ? 1 : 0;
  }
  if (n_pref == 0 || n_pref == spec.modes.size())
    throw ConfigError("task needs at least one preferred and one non-preferred mode");
  if (spec.cond_dim != n_pref) throw ConfigError("cond_dim must equal the number of preferred modes");
  if (!(spec.label_flip_prob >= 0.0 && spec.label_flip_prob <= 1.0))
    throw ConfigError("label_flip_prob must lie in [0, 1]");
}

/// Parses "x,y,std,pref;x,y,std,pref;..." (pref is 1 or 0).
inline std::vector<Mode> parse_modes(std::string_view text) {
  std::vector<Mode> modes;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    std::vector<double> f;
    std::stringstream is(item);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        std::size_t used = 0;
        f.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("bad number '" + tok + "' in mode list");
      }
    }
    if (f.size() < 3) throw ConfigError("mode '" + item + "' needs center coordinates, std and a preferred flag");
    Mode m;
    m.center.assign(f.begin(), f.end() - 2);
    m.std = f[f.size() - 2];
    m.preferred = f.back() != 0.0;
    modes.push_back(std::move(m));
  }
  return modes;
}

inline Vec one_hot(std::size_t n, std::size_t k) {
  Vec c(n, 0.0);
  c.at(k) = 1.0;
  return c;
}

/// Preferred center selected by the one-hot condition c.
inline const Vec& preferred_center(const ToyTaskSpec& spec, std::span<const double> c) {
  const auto pref = spec.preferred_indices();
  if (c.size() != pref.size()) throw ShapeError("condition length does not match the preferred modes");
  std::size_t k = 0;
  for (std::size_t i = 1; i < c.size(); ++i)
    if (c[i] > c[k]) k = i;
  return spec.modes[pref[k]].center;
}

/// r(x, c) = −‖x − μ_pref(c)‖².
inline double reward(const ToyTaskSpec& spec, std::span<const double> x, std::span<const double> c) {
  return -detail::squared_distance(x, preferred_center(spec, c));
}

/// Pair i depends only on (seed, i). The two candidates come from distinct
/// modes: the first mode is uniform, the second uniform over the rest, so each
/// candidate on its own is still a draw from the uniform mixture.
inline PreferencePair gen_pair(const ToyTaskSpec& spec, std::size_t index) {
  Rng rng{spec.seed, stream::kData, index};
  const auto pref = spec.preferred_indices();
  const std::size_t k = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pref.size()) - 1));
  Vec c = one_hot(pref.size(), k);
  const auto n_modes = static_cast<std::int64_t>(spec.modes.size());
  auto draw = [&](std::size_t mode) {
    const Mode& m = spec.modes[mode];
    Vec x(m.center.size());
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = m.center[d] + m.std * rng.normal();
    return x;
  };
  for (;;) {
    const auto first = rng.integer(0, n_modes - 1);
    const auto second = (first + 1 + rng.integer(0, n_modes - 2)) % n_modes;
    Vec a = draw(static_cast<std::size_t>(first));
    Vec b = draw(static_cast<std::size_t>(second));
    const double ra = reward(spec, a, c);
    const double rb = reward(spec, b, c);
    if (ra == rb) continue;
    PreferencePair p = ra > rb ? PreferencePair{std::move(a), std::move(b), c} : PreferencePair{std::move(b), std::move(a), c};
    if (spec.label_flip_prob > 0.0 && rng.uniform() < spec.label_flip_prob) std::swap(p.x0_w, p.x0_l);
    return p;
  }
}

inline std::vector<PreferencePair> gen_dataset(const ToyTaskSpec& spec) {
  validate(spec);
  std::vector<PreferencePair> pairs;
  pairs.reserve(spec.pairs);
  for (std::size_t i = 0; i < spec.pairs; ++i) pairs.push_back(gen_pair(spec, i));
  return pairs;
}

/// Fraction of samples strictly closer to the preferred center (selected by c)
/// than to every non-preferred center.
inline double pref_mass(std::span<const Vec> samples, const ToyTaskSpec& spec, std::span<const double> c) {
  if (samples.empty()) throw ContractError("pref_mass: no samples");
  const Vec& target = preferred_center(spec, c);
  std::size_t hits = 0;
  for (const Vec& x : samples) {
    const double d_pref = detail::squared_distance(x, target);
    bool closer = true;
    for (const Mode& m : spec.modes)
      if (!m.preferred && !(d_pref < detail::squared_distance(x, m.center))) closer = false;
    hits += closer ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Dataset files (JSON lines)

inline void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset to " + path.string());
  for (const auto& p : pairs) {
    ordered_json j;
    j["x0_w"] = p.x0_w;
    j["x0_l"] = p.x0_l;
    j["c"] = p.c;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace detail {
inline Vec finite_array(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) throw ParseError(std::string("missing array '") + key + "'", line);
  Vec v;
  for (const auto& e : j[key]) {
    if (!e.is_number()) throw ParseError(std::string("non-numeric entry in '") + key + "'", line);
    const double x = e.get<double>();
    if (!std::isfinite(x)) throw ParseError(std::string("non-finite entry in '") + key + "'", line);
    v.push_back(x);
  }
  return v;
}
}  // namespace detail

inline std::vector<PreferencePair> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  std::vector<PreferencePair> pairs;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line);
    PreferencePair p{detail::finite_array(j, "x0_w", line), detail::finite_array(j, "x0_l", line),
                     detail::finite_array(j, "c", line)};
    if (p.x0_w.empty() || p.x0_w.size() != p.x0_l.size())
      throw ParseError("winner and loser dimensions differ", line);
    if (!pairs.empty() && (p.x0_w.size() != pairs.front().x0_w.size() || p.c.size() != pairs.front().c.size()))
      throw ParseError("pair dimensions differ from the first line", line);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Checkpoints (JSON)

inline constexpr int kSchemaVersion = 1;

inline ordered_json layers_to_json(const MlpModel& m) {
  ordered_json layers = ordered_json::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    ordered_json layer;
    const auto w = m.weight(l);
    const auto b = m.bias(l);
    layer["weight"] = std::vector<double>(w.begin(), w.end());
    layer["bias"] = std::vector<double>(b.begin(), b.end());
    layers.push_back(std::move(layer));
  }
  return layers;
}

inline void layers_from_json(const json& layers, MlpModel& m) {
  if (!layers.is_array() || layers.size() != m.num_layers()) throw ConfigError("checkpoint: wrong number of layers");
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto w = layers[l].at("weight").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    auto dw = m.weight(l);
    auto db = m.bias(l);
    if (w.size() != dw.size() || b.size() != db.size()) throw ConfigError("checkpoint: layer shape mismatch");
    std::copy(w.begin(), w.end(), dw.begin());
    std::copy(b.begin(), b.end(), db.begin());
  }
}

inline ordered_json model_to_json(const MlpModel& m) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["layer_dims"] = m.layer_dims;
  j["activation"] = to_string(m.activation);
  j["time_embedding"] = to_string(m.time_embedding);
  j["seed"] = m.seed;
  j["layers"] = layers_to_json(m);
  return j;
}

inline MlpModel model_from_json(const json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) throw ConfigError("checkpoint: unsupported schema_version");
  MlpModel m;
  m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
  m.activation = parse_activation(j.at("activation").get<std::string>());
  m.time_embedding = parse_time_embedding(j.value("time_embedding", std::string("fourier")));
  m.seed = j.value("seed", std::uint64_t{0});
  validate_dims(m.layer_dims, m.time_embedding);
  m.params.assign(param_count_for(m.layer_dims), 0.0);
  layers_from_json(j.at("layers"), m);
  return m;
}

inline ordered_json optimizer_to_json(const OptimizerState& st) {
  ordered_json j;
  j["step_count"] = st.step_count;
  j["lr"] = st.hp.lr;
  j["beta1"] = st.hp.beta1;
  j["beta2"] = st.hp.beta2;
  j["eps"] = st.hp.eps;
  j["weight_decay"] = st.hp.weight_decay;
  j["first_moment"] = st.first_moment;
  j["second_moment"] = st.second_moment;
  return j;
}

inline OptimizerState optimizer_from_json(const json& j) {
  OptimizerState st;
  st.step_count = j.at("step_count").get<std::int64_t>();
  st.hp.lr = j.at("lr").get<double>();
  st.hp.beta1 = j.at("beta1").get<double>();
  st.hp.beta2 = j.at("beta2").get<double>();
  st.hp.eps = j.at("eps").get<double>();
  st.hp.weight_decay = j.at("weight_decay").get<double>();
  st.first_moment = j.at("first_moment").get<std::vector<double>>();
  st.second_moment = j.at("second_moment").get<std::vector<double>>();
  return st;
}

inline void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON in ") + path.string() + ": " + e.what(), 1);
  }
}

inline void save_model(const std::filesystem::path& path, const MlpModel& m) { write_json_file(path, model_to_json(m)); }
inline MlpModel load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr std::string_view kMetricsHeader = "step,loss,implicit_acc,mean_delta,mean_weight,pref_mass";

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    return std::nullopt;
  }
};

inline MetricsTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) return t;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) t.columns.push_back(col);
  }
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("bad number '" + cell + "'", n);
      }
    }
    if (row.size() != t.columns.size()) throw ParseError("row width differs from header", n);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace lindpo
