#include "segrobust/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "segrobust/error.hpp"

namespace segrobust {

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 35, kTop = 45, kBottom = 55;

const char* kPalette[] = {"#1f6fb4", "#d1622a", "#3a8f45", "#b03a8c",
                          "#6a5acd", "#8a6d1f", "#20808d", "#a23b3b"};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<ChartSeries>& series) {
  if (series.empty()) throw ConfigError("chart needs at least one series");
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool first = true;
  for (const ChartSeries& s : series) {
    if (s.x.size() != s.y.size()) {
      throw ShapeError("chart series '" + s.name +
                       "' has mismatched x/y lengths");
    }
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        first = false;
      } else {
        x_min = std::min(x_min, s.x[i]);
        x_max = std::max(x_max, s.x[i]);
        y_min = std::min(y_min, s.y[i]);
        y_max = std::max(y_max, s.y[i]);
      }
    }
  }
  if (first) throw ConfigError("chart series are all empty");
  if (x_max == x_min) {
    x_min -= 0.5;
    x_max += 0.5;
  }
  if (y_max == y_min) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto sx = [&](double v) {
    return kLeft + (v - x_min) / (x_max - x_min) * plot_w;
  };
  auto sy = [&](double v) {
    return kTop + plot_h - (v - y_min) / (y_max - y_min) * plot_h;
  };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
     << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
     << kHeight << "\">\n"
     << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << escape_xml(title) << "</text>\n";

  // axes
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\""
     << kLeft + plot_w << "\" y2=\"" << kTop + plot_h
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
     << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n";
  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double fx = x_min + (x_max - x_min) * t / kTicks;
    const double fy = y_min + (y_max - y_min) * t / kTicks;
    const double px = sx(fx), py = sy(fy);
    os << "<line x1=\"" << px << "\" y1=\"" << kTop + plot_h << "\" x2=\""
       << px << "\" y2=\"" << kTop + plot_h + 5 << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << px << "\" y=\"" << kTop + plot_h + 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(fx) << "</text>\n"
       << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py << "\" x2=\"" << kLeft
       << "\" y2=\"" << py << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << kLeft - 8 << "\" y=\"" << py + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(fy) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\">"
     << escape_xml(x_label) << "</text>\n"
     << "<text x=\"18\" y=\"" << kTop + plot_h / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\" transform=\"rotate(-90 18 "
     << kTop + plot_h / 2 << ")\">" << escape_xml(y_label) << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(*kPalette))];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) os << " ";
      os << sx(series[s].x[i]) << "," << sy(series[s].y[i]);
    }
    os << "\"/>\n";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      os << "<circle cx=\"" << sx(series[s].x[i]) << "\" cy=\""
         << sy(series[s].y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 16 + 18 * static_cast<double>(s);
    os << "<line x1=\"" << kLeft + plot_w - 150 << "\" y1=\"" << ly
       << "\" x2=\"" << kLeft + plot_w - 126 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << kLeft + plot_w - 120 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << escape_xml(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw IoError("write failure on " + path);
}

}  // namespace segrobust
