#pragma once

/**
 * Minimal self-contained SVG log-log line charts with error bars; no
 * external tooling involved.  Points with nonpositive coordinates are
 * skipped (they have no log-scale position).
 */

#include <iosfwd>
#include <string>
#include <vector>

namespace vexp {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> y_err;  // may be empty: no error bars
};

void write_loglog_plot(std::ostream& os, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotSeries>& series);

}  // namespace vexp
