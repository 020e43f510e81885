#pragma once

#include <string>
#include <vector>

#include "rcqa/metrics.hpp"
#include "rcqa/probes.hpp"

namespace rcqa {

// "coverage,risk" header, then one line per curve point.
std::string rc_curve_csv(const std::vector<RcPoint>& curve);

// Risk-coverage line chart, one polyline per report.
std::string rc_curve_svg(const std::vector<RiskReport>& reports);

// Two stacked heatmaps (start, end) of one record's probe signals: rows are
// layers 1..T top to bottom, columns passage positions plus NULL, brightness
// proportional to the signal value.
std::string signal_heatmap_svg(const SignalRecord& record);

// Fixed-width text table with AURC / ROC / AP (x100) per scorer.
std::string summary_table(const std::vector<RiskReport>& reports);

}  // namespace rcqa
