// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "lindpo/data_io.hpp"
#include "lindpo/errors.hpp"
#include "lindpo/objectives.hpp"

namespace lindpo::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
constexpr double kPanelW = 420, kPanelH = 260, kMargin = 48;

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

inline void draw_panel(std::string& svg, const Panel& p, double ox, double oy) {
  Range xr, yr;
  for (const auto& s : p.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  const double w = kPanelW - 2 * kMargin, h = kPanelH - 2 * kMargin;
  auto px = [&](double x) { return ox + kMargin + (x - xr.lo) / (xr.hi - xr.lo) * w; };
  auto py = [&](double y) { return oy + kMargin + h - (y - yr.lo) / (yr.hi - yr.lo) * h; };

  svg += "<g>\n<rect x=\"" + num(ox + kMargin) + "\" y=\"" + num(oy + kMargin) + "\" width=\"" + num(w) +
         "\" height=\"" + num(h) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  svg += "<text x=\"" + num(ox + kPanelW / 2) + "\" y=\"" + num(oy + kMargin - 12) +
         "\" text-anchor=\"middle\" font-size=\"13\">" + escape(p.title) + "</text>\n";
  for (double f : {0.0, 0.5, 1.0}) {
    const double xv = xr.lo + f * (xr.hi - xr.lo), yv = yr.lo + f * (yr.hi - yr.lo);
    svg += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(oy + kMargin + h + 14) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + tick(xv) + "</text>\n";
    svg += "<text x=\"" + num(ox + kMargin - 4) + "\" y=\"" + num(py(yv) + 3) +
           "\" text-anchor=\"end\" font-size=\"10\">" + tick(yv) + "</text>\n";
  }
  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const auto& s = p.series[k];
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += num(px(s.x[i])) + "," + num(py(s.y[i]));
    }
    if (!pts.empty())
      svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
             "\"/>\n";
    if (p.series.size() > 1)
      svg += "<text x=\"" + num(ox + kMargin + 6) + "\" y=\"" + num(oy + kMargin + 14 + 13 * k) + "\" fill=\"" +
             color + "\" font-size=\"11\">" + escape(s.label) + "</text>\n";
  }
  svg += "</g>\n";
}

}  // namespace detail

/// Panels laid out two per row in one self-contained SVG document.
inline std::string render(const std::vector<Panel>& panels) {
  using namespace detail;
  const std::size_t cols = panels.size() > 1 ? 2 : 1;
  const std::size_t rows = std::max<std::size_t>(1, (panels.size() + cols - 1) / cols);
  const double width = kPanelW * cols, height = kPanelH * rows;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                    num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) +
                    "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i)
    draw_panel(svg, panels[i], kPanelW * (i % cols), kPanelH * (i / cols));
  svg += "</svg>\n";
  return svg;
}

inline constexpr std::string_view kMetricColumns[] = {"loss", "implicit_acc", "mean_weight", "pref_mass"};

/// Loss, implicit accuracy, mean weight and pref_mass against step.
inline std::string metrics_svg(const MetricsTable& table) {
  if (!table.column("step")) throw ConfigError("metrics schema: missing column 'step'");
  for (auto name : kMetricColumns)
    if (!table.column(name)) throw ConfigError("metrics schema: missing column '" + std::string(name) + "'");
  const std::size_t sc = *table.column("step");
  std::vector<Panel> panels;
  for (auto name : kMetricColumns) {
    const std::size_t c = *table.column(name);
    Series s{std::string(name), {}, {}};
    for (const auto& row : table.rows) {
      s.x.push_back(row[sc]);
      s.y.push_back(row[c]);
    }
    panels.push_back({std::string(name), {std::move(s)}});
  }
  return render(panels);
}

/// The five utilities after normalization, over x ∈ [−w, w].
inline std::string utility_svg(const UtilitySpec& base = {}, int points = 201) {
  Panel p{"normalized utility", {}};
  for (UtilityKind k : {UtilityKind::Sigmoid, UtilityKind::KT, UtilityKind::LossAverse, UtilityKind::RiskSeeking,
                        UtilityKind::Linear}) {
    UtilitySpec u = base;
    u.kind = k;
    Series s{std::string(to_string(k)), {}, {}};
    for (int i = 0; i < points; ++i) {
      const double x = -u.norm_window + 2.0 * u.norm_window * i / (points - 1);
      s.x.push_back(x);
      s.y.push_back(normalize_utility(u, x));
    }
    p.series.push_back(std::move(s));
  }
  return render({p});
}

}  // namespace lindpo::plot
