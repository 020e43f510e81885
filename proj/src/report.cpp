#include "rcqa/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace rcqa {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string rc_curve_csv(const std::vector<RcPoint>& curve) {
  std::string out = "coverage,risk\n";
  for (const auto& p : curve) {
    out += fmt("%.17g", p.coverage) + "," + fmt("%.17g", p.risk) + "\n";
  }
  return out;
}

std::string rc_curve_svg(const std::vector<RiskReport>& reports) {
  const double width = 640, height = 420, left = 60, right = 170, top = 20,
               bottom = 50;
  const double pw = width - left - right;
  const double ph = height - top - bottom;
  double max_risk = 0.05;
  for (const auto& r : reports) {
    for (const auto& p : r.rc_curve) max_risk = std::max(max_risk, p.risk);
  }
  max_risk = std::ceil(max_risk * 10.0) / 10.0;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) +
       "\" height=\"" + fmt("%.0f", height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<rect x=\"" + fmt("%.1f", left) + "\" y=\"" + fmt("%.1f", top) + "\" width=\"" +
       fmt("%.1f", pw) + "\" height=\"" + fmt("%.1f", ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = i / 5.0;
    const double x = left + fx * pw;
    const double y = top + ph - fx * ph;
    s += "<text x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.1f", top + ph + 16) +
         "\" text-anchor=\"middle\">" + fmt("%.1f", fx) + "</text>\n";
    s += "<text x=\"" + fmt("%.1f", left - 6) + "\" y=\"" + fmt("%.1f", y + 4) +
         "\" text-anchor=\"end\">" + fmt("%.2f", fx * max_risk) + "</text>\n";
  }
  s += "<text x=\"" + fmt("%.1f", left + pw / 2) + "\" y=\"" + fmt("%.1f", height - 10) +
       "\" text-anchor=\"middle\">coverage</text>\n";
  s += "<text transform=\"translate(16," + fmt("%.1f", top + ph / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">risk</text>\n";

  for (std::size_t i = 0; i < reports.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
         "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : reports[i].rc_curve) {
      s += fmt("%.2f", left + p.coverage * pw) + "," +
           fmt("%.2f", top + ph - (p.risk / max_risk) * ph) + " ";
    }
    s += "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(i);
    s += "<line x1=\"" + fmt("%.1f", left + pw + 12) + "\" y1=\"" + fmt("%.1f", ly - 4) +
         "\" x2=\"" + fmt("%.1f", left + pw + 32) + "\" y2=\"" + fmt("%.1f", ly - 4) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt("%.1f", left + pw + 38) + "\" y=\"" + fmt("%.1f", ly) + "\">" +
         reports[i].scorer + " (" + fmt("%.2f", 100.0 * reports[i].aurc) + ")</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string signal_heatmap_svg(const SignalRecord& record) {
  const int layers = static_cast<int>(record.signals.layers.size());
  const int cols =
      layers > 0 ? static_cast<int>(record.signals.layers.front().start.size()) : 0;
  const double cell = 14, left = 70, top = 30, gap = 30;
  const double panel_h = cell * layers;
  const double width = left + cell * cols + 20;
  const double height = top + 2 * panel_h + gap + 20;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) +
       "\" height=\"" + fmt("%.0f", height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"4\" y=\"16\">" + record.qid + " [" + std::string(to_string(record.outcome)) +
       "]</text>\n";
  for (int panel = 0; panel < 2; ++panel) {
    const double y0 = top + panel * (panel_h + gap);
    s += "<text x=\"4\" y=\"" + fmt("%.1f", y0 + panel_h / 2 + 4) + "\">" +
         (panel == 0 ? "start" : "end") + "</text>\n";
    for (int t = 0; t < layers; ++t) {
      const auto& v = panel == 0 ? record.signals.layers[t].start
                                 : record.signals.layers[t].end;
      // Top row is the last layer.
      const double y = y0 + (layers - 1 - t) * cell;
      for (int c = 0; c < cols; ++c) {
        const int level = static_cast<int>(std::lround(255.0 * std::clamp(v[c], 0.0, 1.0)));
        char color[16];
        std::snprintf(color, sizeof(color), "#%02x%02x%02x", level, level, level);
        s += "<rect x=\"" + fmt("%.1f", left + c * cell) + "\" y=\"" + fmt("%.1f", y) +
             "\" width=\"" + fmt("%.0f", cell) + "\" height=\"" + fmt("%.0f", cell) +
             "\" fill=\"" + color + "\"/>\n";
      }
    }
  }
  s += "</svg>\n";
  return s;
}

std::string summary_table(const std::vector<RiskReport>& reports) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %8s %8s %8s %8s %6s\n", "scorer", "AURC",
                "ROC", "AP", "risk@1", "n");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-16s %8.2f %8.2f %8.2f %8.2f %6zu\n",
                  r.scorer.c_str(), 100.0 * r.aurc, 100.0 * r.roc_auc, 100.0 * r.ap,
                  100.0 * r.full_coverage_risk, r.n);
    out += line;
  }
  return out;
}

}  // namespace rcqa
