#pragma once

#include <string>
#include <vector>

namespace segrobust {

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal self-contained SVG line chart: axes with ticks and labels,
// one polyline per series, legend.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<ChartSeries>& series);

}  // namespace segrobust
