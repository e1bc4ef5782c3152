#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "pcl/common.hpp"

namespace pcl {

// Scatter plot SVG writer: dependency-free, deterministic output (fixed
// float formatting, no timestamps), one marker style per series.

struct ScatterSeries {
  std::string label;
  char marker = '+';  // '+', '.', '*'
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

inline void write_scatter_svg(const std::string& path, const std::string& title,
                              const std::string& x_label, const std::string& y_label,
                              const std::vector<ScatterSeries>& series) {
  const double width = 640, height = 480;
  const double ml = 70, mr = 20, mt = 40, mb = 55;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) {
    xmax += 0.5;
    xmin -= 0.5;
  }
  if (ymax == ymin) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
  auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n";
  out << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  out << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\">"
      << title << "</text>\n";
  // axes
  out << "<line x1=\"" << detail::fmt2(ml) << "\" y1=\"" << detail::fmt2(height - mb)
      << "\" x2=\"" << detail::fmt2(width - mr) << "\" y2=\"" << detail::fmt2(height - mb)
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << detail::fmt2(ml) << "\" y1=\"" << detail::fmt2(mt) << "\" x2=\""
      << detail::fmt2(ml) << "\" y2=\"" << detail::fmt2(height - mb)
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    out << "<line x1=\"" << detail::fmt2(px(xv)) << "\" y1=\"" << detail::fmt2(height - mb)
        << "\" x2=\"" << detail::fmt2(px(xv)) << "\" y2=\"" << detail::fmt2(height - mb + 5)
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << detail::fmt2(px(xv)) << "\" y=\"" << detail::fmt2(height - mb + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::fmt4(xv) << "</text>\n";
    out << "<line x1=\"" << detail::fmt2(ml - 5) << "\" y1=\"" << detail::fmt2(py(yv))
        << "\" x2=\"" << detail::fmt2(ml) << "\" y2=\"" << detail::fmt2(py(yv))
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << detail::fmt2(ml - 8) << "\" y=\"" << detail::fmt2(py(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::fmt4(yv) << "</text>\n";
  }
  out << "<text x=\"" << detail::fmt2((ml + width - mr) / 2) << "\" y=\""
      << detail::fmt2(height - 12)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << detail::fmt2((mt + height - mb) / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 16 "
      << detail::fmt2((mt + height - mb) / 2) << ")\">" << y_label << "</text>\n";

  const char* colors[] = {"#1f6fb4", "#d04b30", "#3c9d4e", "#8450c0", "#c08a00"};
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const std::string color = colors[si % 5];
    for (const auto& [x, y] : s.points) {
      const double cx = px(x), cy = py(y);
      switch (s.marker) {
        case '.':
          out << "<circle cx=\"" << detail::fmt2(cx) << "\" cy=\"" << detail::fmt2(cy)
              << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
          break;
        case '*':
          out << "<path d=\"M" << detail::fmt2(cx - 4) << ' ' << detail::fmt2(cy) << "H"
              << detail::fmt2(cx + 4) << "M" << detail::fmt2(cx) << ' ' << detail::fmt2(cy - 4)
              << "V" << detail::fmt2(cy + 4) << "M" << detail::fmt2(cx - 3) << ' '
              << detail::fmt2(cy - 3) << "L" << detail::fmt2(cx + 3) << ' '
              << detail::fmt2(cy + 3) << "M" << detail::fmt2(cx - 3) << ' '
              << detail::fmt2(cy + 3) << "L" << detail::fmt2(cx + 3) << ' '
              << detail::fmt2(cy - 3) << "\" stroke=\"" << color << "\" fill=\"none\"/>\n";
          break;
        default:  // '+'
          out << "<path d=\"M" << detail::fmt2(cx - 4) << ' ' << detail::fmt2(cy) << "H"
              << detail::fmt2(cx + 4) << "M" << detail::fmt2(cx) << ' ' << detail::fmt2(cy - 4)
              << "V" << detail::fmt2(cy + 4) << "\" stroke=\"" << color << "\" fill=\"none\"/>\n";
      }
    }
    out << "<text x=\"" << detail::fmt2(width - mr - 6) << "\" y=\""
        << detail::fmt2(mt + 16 * double(si + 1)) << "\" text-anchor=\"end\" "
        << "font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">" << s.label
        << " (" << s.marker << ")</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace pcl
