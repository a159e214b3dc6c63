#include "svg_plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace penning::plot {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Scale {
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;
  double px0 = 0.0;
  double px1 = 1.0;

  double map(double v) const {
    const double a = log ? std::log10(v) : v;
    return px0 + (a - lo) / (hi - lo) * (px1 - px0);
  }
};

Scale make_scale(std::vector<double> vals, bool log, double px0, double px1) {
  Scale s;
  s.log = log;
  s.px0 = px0;
  s.px1 = px1;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : vals) {
    if (!std::isfinite(v) || (log && v <= 0.0)) continue;
    const double a = log ? std::log10(v) : v;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  s.lo = lo - pad;
  s.hi = hi + pad;
  return s;
}

std::string tick_label(double a, bool log) {
  if (log) return fmt::format("1e{}", static_cast<int>(std::round(a)));
  return fmt::format("{:.4g}", a);
}

std::vector<double> ticks(const Scale& s) {
  std::vector<double> out;
  if (s.log) {
    for (double e = std::ceil(s.lo); e <= s.hi; e += 1.0) out.push_back(e);
    return out;
  }
  const double span = s.hi - s.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  for (double t = std::ceil(s.lo / step) * step; t <= s.hi; t += step) out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

std::string frame(const Axes& axes, const Scale& sx, const Scale& sy) {
  std::string o;
  o += fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)", kWidth, kHeight);
  o += "\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += fmt::format(R"(<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>)", kWidth / 2, esc(axes.title)) + "\n";
  o += fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>)", kLeft, kTop,
                   kWidth - kLeft - kRight, kHeight - kTop - kBottom) + "\n";
  for (double t : ticks(sx)) {
    const double px = sx.px0 + (t - sx.lo) / (sx.hi - sx.lo) * (sx.px1 - sx.px0);
    o += fmt::format(R"(<line x1="{0:.2f}" y1="{1}" x2="{0:.2f}" y2="{2}" stroke="black"/><text x="{0:.2f}" y="{3}" text-anchor="middle">{4}</text>)",
                     px, kHeight - kBottom, kHeight - kBottom + 5, kHeight - kBottom + 18, tick_label(t, sx.log)) + "\n";
  }
  for (double t : ticks(sy)) {
    const double py = sy.px0 + (t - sy.lo) / (sy.hi - sy.lo) * (sy.px1 - sy.px0);
    o += fmt::format(R"(<line x1="{0}" y1="{1:.2f}" x2="{2}" y2="{1:.2f}" stroke="black"/><text x="{3}" y="{4:.2f}" text-anchor="end">{5}</text>)",
                     kLeft - 5, py, kLeft, kLeft - 8, py + 4, tick_label(t, sy.log)) + "\n";
  }
  o += fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)", (kLeft + kWidth - kRight) / 2, kHeight - 15, esc(axes.xlabel)) + "\n";
  o += fmt::format(R"svg(<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>)svg", (kTop + kHeight - kBottom) / 2, esc(axes.ylabel)) + "\n";
  return o;
}

}  // namespace

std::string line_plot(const Axes& axes, const std::vector<Series>& series) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series x/y size mismatch");
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      const double e = s.yerr.empty() ? 0.0 : s.yerr[i];
      ys.push_back(s.y[i] - (axes.logy ? 0.0 : e));
      ys.push_back(s.y[i] + e);
    }
  }
  const Scale sx = make_scale(xs, axes.logx, kLeft, kWidth - kRight);
  const Scale sy = make_scale(ys, axes.logy, kHeight - kBottom, kTop);
  std::string o = frame(axes, sx, sy);
  const auto ok = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && !(axes.logx && x <= 0.0) && !(axes.logy && y <= 0.0);
  };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (s.markers) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!ok(s.x[i], s.y[i])) continue;
        const double px = sx.map(s.x[i]);
        const double py = sy.map(s.y[i]);
        if (!s.yerr.empty() && s.yerr[i] > 0.0) {
          const double lo = axes.logy ? std::max(s.y[i] - s.yerr[i], s.y[i] * 1e-3) : s.y[i] - s.yerr[i];
          o += fmt::format(R"(<line x1="{0:.2f}" y1="{1:.2f}" x2="{0:.2f}" y2="{2:.2f}" stroke="{3}"/>)", px,
                           sy.map(lo), sy.map(s.y[i] + s.yerr[i]), color) + "\n";
        }
        o += fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="3" fill="{}"/>)", px, py, color) + "\n";
      }
    } else {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!ok(s.x[i], s.y[i])) continue;
        pts += fmt::format("{:.2f},{:.2f} ", sx.map(s.x[i]), sy.map(s.y[i]));
      }
      o += fmt::format(R"(<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{}/>)", pts, color,
                       s.dashed ? R"( stroke-dasharray="6 4")" : "") + "\n";
    }
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(k);
    o += fmt::format(R"(<rect x="{}" y="{}" width="12" height="3" fill="{}"/><text x="{}" y="{}">{}</text>)",
                     kWidth - kRight + 10, ly - 4, color, kWidth - kRight + 26, ly, esc(s.label)) + "\n";
  }
  o += "</svg>\n";
  return o;
}

std::string heat_map(const Axes& axes, int nx, int ny, const std::vector<double>& values, double x0, double x1,
                     double y0, double y1) {
  if (nx <= 0 || ny <= 0 || values.size() != static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)) {
    throw std::invalid_argument("heat map shape mismatch");
  }
  Scale sx{x0, x1, false, kLeft, kWidth - kRight};
  Scale sy{y0, y1, false, kHeight - kBottom, kTop};
  std::string o = frame(axes, sx, sy);
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, std::abs(v));
  if (vmax == 0.0) vmax = 1.0;
  const double cw = (sx.px1 - sx.px0) / nx;
  const double ch = (sy.px0 - sy.px1) / ny;
  for (int r = 0; r < ny; ++r) {
    for (int c = 0; c < nx; ++c) {
      const double v = values[static_cast<std::size_t>(r * nx + c)] / vmax;  // diverging blue-white-red
      const int fade = static_cast<int>(std::round(255.0 * (1.0 - std::min(1.0, std::abs(v)))));
      const std::string color = v >= 0 ? fmt::format("rgb(255,{0},{0})", fade) : fmt::format("rgb({0},{0},255)", fade);
      o += fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="{}"/>)", sx.px0 + c * cw,
                       sy.px0 - (r + 1) * ch, cw + 0.05, ch + 0.05, color) + "\n";
    }
  }
  o += fmt::format(R"(<text x="{}" y="{}">scale: +/-{:.4g}</text>)", kWidth - kRight + 10, kTop + 14, vmax) + "\n";
  o += "</svg>\n";
  return o;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

}  // namespace penning::plot
