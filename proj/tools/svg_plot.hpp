#pragma once

// Minimal SVG emitter for line/scatter plots and heat maps. Output depends only on the
// data, so plots are as reproducible as the CSV next to them.

#include <string>
#include <vector>

namespace penning::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> yerr;  // optional, same size as y
  bool markers = false;      // scatter instead of polyline
  bool dashed = false;
};

struct Axes {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool logx = false;
  bool logy = false;
};

std::string line_plot(const Axes& axes, const std::vector<Series>& series);

/// values[row * nx + col], row 0 at the bottom.
std::string heat_map(const Axes& axes, int nx, int ny, const std::vector<double>& values, double x0, double x1,
                     double y0, double y1);

void write_file(const std::string& path, const std::string& text);

}  // namespace penning::plot
