#pragma once
// Figure emission: loss curves and discrepancy trajectories from a train
// log, sensitivity sweeps from an ablation table. Every figure is written as
// a self-contained SVG next to a CSV holding the exact numbers it draws.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "poseadapt/ablation.hpp"
#include "poseadapt/common.hpp"
#include "poseadapt/dataset.hpp"  // detail::format_real
#include "poseadapt/engine.hpp"

namespace poseadapt {

struct PlotSeries {
  std::string label;
  std::vector<real> x, y;  // matching lengths
};

namespace detail {

// Tick spacing from the 1-2-5 ladder giving roughly `target` intervals.
inline real tick_step(real range, int target) {
  if (!(range > 0)) return 1;
  const real raw = range / target;
  const real mag = std::pow(real(10), std::floor(std::log10(raw)));
  for (const real m : {real(1), real(2), real(5)})
    if (raw <= m * mag) return m * mag;
  return 10 * mag;
}

inline std::string format_tick(real v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

// A conventional line chart: light grid, 1-2-5 ticks, legend in the top
// right corner. Returns the full SVG document.
inline std::string render_line_chart(const std::string& title,
                                     const std::string& xlabel,
                                     const std::string& ylabel,
                                     const std::vector<PlotSeries>& series) {
  POSEADAPT_CHECK(!series.empty(), "plot: no series");
  real xmin = std::numeric_limits<real>::infinity(), xmax = -xmin;
  real ymin = xmin, ymax = -xmin;
  std::size_t points = 0;
  for (const PlotSeries& s : series) {
    POSEADAPT_CHECK(s.x.size() == s.y.size(),
                    "plot: series '" + s.label + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
      ++points;
    }
  }
  POSEADAPT_CHECK(points > 0, "plot: no finite data points");
  if (xmax == xmin) { xmin -= 1; xmax += 1; }
  if (ymax == ymin) {
    const real pad = std::max(real(1), std::abs(ymax)) * real(0.1);
    ymin -= pad;
    ymax += pad;
  }

  const real width = 640, height = 400;
  const real left = 70, right = 20, top = 40, bottom = 50;
  const real pw = width - left - right, ph = height - top - bottom;
  const auto px = [&](real x) {
    return left + (x - xmin) / (xmax - xmin) * pw;
  };
  const auto py = [&](real y) {
    return top + (ymax - y) / (ymax - ymin) * ph;
  };

  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  std::ostringstream svg;
  svg.precision(8);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << svg_escape(title) << "</text>\n";

  const real xstep = tick_step(xmax - xmin, 6);
  const real ystep = tick_step(ymax - ymin, 5);
  for (real t = std::ceil(xmin / xstep) * xstep; t <= xmax + xstep * 1e-9;
       t += xstep) {
    const real gx = px(t);
    svg << "<line x1=\"" << gx << "\" y1=\"" << top << "\" x2=\"" << gx
        << "\" y2=\"" << top + ph << "\" stroke=\"#e0e0e0\"/>\n"
        << "<text x=\"" << gx << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << format_tick(t) << "</text>\n";
  }
  for (real t = std::ceil(ymin / ystep) * ystep; t <= ymax + ystep * 1e-9;
       t += ystep) {
    const real gy = py(t);
    svg << "<line x1=\"" << left << "\" y1=\"" << gy << "\" x2=\""
        << left + pw << "\" y2=\"" << gy << "\" stroke=\"#e0e0e0\"/>\n"
        << "<text x=\"" << left - 6 << "\" y=\"" << gy + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << format_tick(t) << "</text>\n";
  }
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw
      << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#404040\"/>\n"
      << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">"
      << svg_escape(xlabel) << "</text>\n"
      << "<text x=\"16\" y=\"" << top + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 16 "
      << top + ph / 2 << ")\">" << svg_escape(ylabel) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % (sizeof(palette) / sizeof(*palette))];
    std::ostringstream pts;
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (!std::isfinite(series[s].x[i]) || !std::isfinite(series[s].y[i]))
        continue;
      pts << px(series[s].x[i]) << "," << py(series[s].y[i]) << " ";
    }
    svg << "<polyline points=\"" << pts.str()
        << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\"/>"
        << "\n";
    if (series[s].x.size() <= 32)  // mark sparse series' actual points
      for (std::size_t i = 0; i < series[s].x.size(); ++i)
        svg << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\""
            << py(series[s].y[i]) << "\" r=\"2.5\" fill=\"" << color
            << "\"/>\n";
    const real ly = top + 14 + real(s) * 16;
    svg << "<line x1=\"" << left + pw - 120 << "\" y1=\"" << ly << "\" x2=\""
        << left + pw - 100 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << left + pw - 94 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << svg_escape(series[s].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// Long-format CSV: one row per point, exact values.
inline std::string series_csv(const std::string& xname,
                              const std::string& yname,
                              const std::vector<PlotSeries>& series) {
  std::ostringstream out;
  out << "series," << xname << "," << yname << "\n";
  for (const PlotSeries& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << s.label << "," << format_real(s.x[i]) << "," << format_real(s.y[i])
          << "\n";
  return out.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  POSEADAPT_CHECK(out.good(), "cannot write " + path.string());
  out << text;
}

inline std::vector<std::string> write_chart(
    const std::filesystem::path& dir, const std::string& stem,
    const std::string& title, const std::string& xlabel,
    const std::string& ylabel, const std::vector<PlotSeries>& series) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path svg = dir / (stem + ".svg");
  const std::filesystem::path csv = dir / (stem + ".csv");
  write_file(svg, render_line_chart(title, xlabel, ylabel, series));
  write_file(csv, series_csv(xlabel, ylabel, series));
  return {svg.string(), csv.string()};
}

}  // namespace detail

// Per-phase training totals over step index.
inline std::vector<std::string> emit_loss_curves(const TrainLog& log,
                                                 const std::string& out_dir) {
  std::vector<PlotSeries> series;
  for (const char* phase : {"pretrain", "stage_a", "stage_b", "stage_c"}) {
    const std::vector<real> y = log.series(phase, "total");
    if (y.empty()) continue;
    PlotSeries s;
    s.label = phase;
    s.y = y;
    s.x.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) s.x[i] = real(i);
    series.push_back(std::move(s));
  }
  POSEADAPT_CHECK(!series.empty(),
                  "emit_loss_curves: log has no phase totals");
  return detail::write_chart(out_dir, "loss_curves", "Training loss by phase",
                             "step", "total", series);
}

// Aggregation/segregation/combined discrepancy values over the adaptation
// run, read from the extractor-alignment phase records.
inline std::vector<std::string> emit_discrepancy_trajectory(
    const TrainLog& log, const std::string& out_dir) {
  const char* phase = "stage_c";
  if (log.series(phase, "dl").empty()) phase = "stage_b";
  std::vector<PlotSeries> series;
  for (const char* key : {"inter", "spec", "dl"}) {
    const std::vector<real> y = log.series(phase, key);
    if (y.empty()) continue;
    PlotSeries s;
    s.label = key;
    s.y = y;
    s.x.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) s.x[i] = real(i);
    series.push_back(std::move(s));
  }
  POSEADAPT_CHECK(!series.empty(),
                  "emit_discrepancy_trajectory: log has no discrepancy "
                  "records (was the discrepancy loss enabled?)");
  return detail::write_chart(out_dir, "discrepancy_trajectory",
                             "Discrepancy terms during adaptation",
                             "iteration", "value", series);
}

// Median overall accuracy against each swept knob, parsed from arm names of
// the form `knob=value`.
inline std::vector<std::string> emit_sensitivity(const AblationTable& table,
                                                 const std::string& out_dir) {
  std::map<std::string, std::vector<std::pair<real, real>>> knobs;
  for (const ArmResult& a : table.arms) {
    const std::size_t eq = a.name.find('=');
    if (eq == std::string::npos || std::isnan(a.median_overall)) continue;
    try {
      const real x = std::stod(a.name.substr(eq + 1));
      knobs[a.name.substr(0, eq)].push_back({x, a.median_overall});
    } catch (const std::exception&) {
      continue;  // arm name is not knob=value shaped
    }
  }
  POSEADAPT_CHECK(!knobs.empty(),
                  "emit_sensitivity: no knob=value arms with results in plan '" +
                      table.plan_name + "'");
  std::vector<PlotSeries> series;
  for (auto& [knob, pts] : knobs) {
    std::sort(pts.begin(), pts.end());
    PlotSeries s;
    s.label = knob;
    for (const auto& [x, y] : pts) {
      s.x.push_back(x);
      s.y.push_back(y);
    }
    series.push_back(std::move(s));
  }
  return detail::write_chart(out_dir, "sensitivity",
                             "Sensitivity of median PCK", "value",
                             "median overall PCK", series);
}

// Umbrella: emits every figure the given inputs support. Pass nullptr for an
// input you do not have; at least one must be present and usable.
inline std::vector<std::string> emit_plots(const TrainLog* log,
                                           const AblationTable* table,
                                           const std::string& out_dir) {
  POSEADAPT_CHECK(log != nullptr || table != nullptr,
                  "emit_plots: no inputs given");
  std::vector<std::string> files;
  if (log) {
    for (const std::string& f : emit_loss_curves(*log, out_dir))
      files.push_back(f);
    const std::vector<std::string> d = [&] {
      try {
        return emit_discrepancy_trajectory(*log, out_dir);
      } catch (const Error&) {
        return std::vector<std::string>{};  // discrepancy disabled: skip
      }
    }();
    for (const std::string& f : d) files.push_back(f);
  }
  if (table) {
    const std::vector<std::string> s = [&] {
      try {
        return emit_sensitivity(*table, out_dir);
      } catch (const Error&) {
        if (!log) throw;  // table-only call must produce something
        return std::vector<std::string>{};
      }
    }();
    for (const std::string& f : s) files.push_back(f);
  }
  return files;
}

}  // namespace poseadapt
