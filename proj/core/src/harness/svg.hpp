#pragma once

#include <string>
#include <vector>

namespace harlab::harness::detail {

struct Series {
  std::string name;
  std::vector<double> values;  // one per x position; NaN leaves a gap
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_ticks;  // empty: 1..n
  std::vector<Series> series;
  double y_min = 0.0;
  double y_max = 1.0;
  bool auto_y = false;
};

/// Static SVG rendering of a line chart with a legend.
std::string render_svg(const LineChart& chart);

}  // namespace harlab::harness::detail
