#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "proxygap/metrics.hpp"

namespace proxygap {

// Self-contained SVG bar charts. Every bar carries a <text class="value">
// label produced by format_metric, the same formatter the CSV writer uses,
// so emitted charts are machine-checkable against the CSV.

namespace svg_detail {

struct Bar {
  std::string label;
  std::optional<double> value;  // absent renders as "n/a"
};

inline void render_bar_panel(std::ostringstream& os, double x0, double y0,
                             double width, double height, const std::string& title,
                             const std::vector<Bar>& bars) {
  double lo = 0, hi = 0;
  for (const auto& b : bars) {
    if (!b.value) continue;
    lo = std::min(lo, *b.value);
    hi = std::max(hi, *b.value);
  }
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.15 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double plot_top = y0 + 34, plot_bottom = y0 + height - 26;
  const double plot_left = x0 + 10, plot_right = x0 + width - 10;
  auto y_of = [&](double v) {
    return plot_bottom - (v - lo) / (hi - lo) * (plot_bottom - plot_top);
  };

  os << "<text x=\"" << x0 + width / 2 << "\" y=\"" << y0 + 18
     << "\" text-anchor=\"middle\" font-size=\"13\" font-weight=\"bold\">" << title
     << "</text>\n";
  os << "<line x1=\"" << plot_left << "\" y1=\"" << y_of(0) << "\" x2=\"" << plot_right
     << "\" y2=\"" << y_of(0) << "\" stroke=\"#555\" stroke-width=\"1\"/>\n";

  const double slot = (plot_right - plot_left) / static_cast<double>(bars.size());
  const double bar_w = std::min(46.0, slot * 0.6);
  for (size_t i = 0; i < bars.size(); ++i) {
    const double cx = plot_left + (static_cast<double>(i) + 0.5) * slot;
    os << "<text x=\"" << cx << "\" y=\"" << plot_bottom + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << bars[i].label << "</text>\n";
    if (!bars[i].value) {
      os << "<text x=\"" << cx << "\" y=\"" << y_of(0) - 6
         << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#999\">n/a</text>\n";
      continue;
    }
    const double v = *bars[i].value;
    const double top = std::min(y_of(v), y_of(0));
    const double h = std::abs(y_of(v) - y_of(0));
    const char* fill = v >= 0 ? "#4878a8" : "#c0604d";
    os << "<rect x=\"" << cx - bar_w / 2 << "\" y=\"" << top << "\" width=\"" << bar_w
       << "\" height=\"" << std::max(h, 0.5) << "\" fill=\"" << fill << "\"/>\n";
    const double label_y = v >= 0 ? top - 5 : top + h + 13;
    os << "<text class=\"value\" x=\"" << cx << "\" y=\"" << label_y
       << "\" text-anchor=\"middle\" font-size=\"10\">" << format_metric(v)
       << "</text>\n";
  }
}

inline std::string document(double width, double height, const std::string& body) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
     << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
     << body << "</svg>\n";
  return os.str();
}

}  // namespace svg_detail

// per-seed OOD gaps: left panel all-sample, right panel informative-subset
// diagnostic
inline std::string emit_per_seed_chart(const ConfigReport& report) {
  if (report.seeds.empty())
    throw std::invalid_argument("emit_per_seed_chart: report has no seeds");
  const double panel_w =
      std::max(240.0, 40.0 + 70.0 * static_cast<double>(report.seeds.size()));
  const double panel_h = 280;

  std::vector<svg_detail::Bar> main_bars, diag_bars;
  for (const auto& s : report.seeds) {
    main_bars.push_back({"seed " + std::to_string(s.seed), s.delta_main});
    diag_bars.push_back({"seed " + std::to_string(s.seed), s.delta_diag});
  }

  std::ostringstream body;
  body << "<text x=\"" << panel_w << "\" y=\"16\" text-anchor=\"middle\" "
          "font-size=\"14\" font-weight=\"bold\">"
       << report.name << ": per-seed OOD probe-accuracy gaps</text>\n";
  svg_detail::render_bar_panel(body, 0, 24, panel_w, panel_h, "all-sample gap (B-A)",
                               main_bars);
  svg_detail::render_bar_panel(body, panel_w, 24, panel_w, panel_h,
                               "diagnostic gap (B-A)", diag_bars);
  return svg_detail::document(2 * panel_w, panel_h + 32, body.str());
}

// config-level means: one group of three bars (proxy gap vs the two OOD
// gaps) per report
inline std::string emit_config_means_chart(const std::vector<ConfigReport>& reports) {
  if (reports.empty())
    throw std::invalid_argument("emit_config_means_chart: no reports");
  const double panel_w = 300;
  const double panel_h = 280;

  std::ostringstream body;
  body << "<text x=\"" << panel_w * static_cast<double>(reports.size()) / 2
       << "\" y=\"16\" text-anchor=\"middle\" font-size=\"14\" font-weight=\"bold\">"
          "config-level mean gaps</text>\n";
  double x = 0;
  for (const auto& r : reports) {
    std::vector<svg_detail::Bar> bars{{"proxy A-B", r.mean_delta_proxy},
                                      {"main B-A", r.mean_delta_main},
                                      {"diag B-A", r.mean_delta_diag}};
    svg_detail::render_bar_panel(body, x, 24, panel_w, panel_h, r.name, bars);
    x += panel_w;
  }
  return svg_detail::document(panel_w * static_cast<double>(reports.size()),
                              panel_h + 32, body.str());
}

// value labels of every class="value" text node, in document order
inline std::vector<std::string> parse_chart_values(const std::string& svg) {
  std::vector<std::string> values;
  const std::string needle = "<text class=\"value\"";
  size_t pos = 0;
  while ((pos = svg.find(needle, pos)) != std::string::npos) {
    const size_t open = svg.find('>', pos);
    const size_t close = svg.find("</text>", open);
    if (open == std::string::npos || close == std::string::npos) break;
    values.push_back(svg.substr(open + 1, close - open - 1));
    pos = close;
  }
  return values;
}

}  // namespace proxygap
