#include "vocab_expand/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace vexp {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_loglog_plot(std::ostream& os, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotSeries>& series) {
  double lo_x = std::numeric_limits<double>::infinity();
  double hi_x = -lo_x;
  double lo_y = lo_x;
  double hi_y = -lo_x;
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size())
      throw std::invalid_argument("plot series: x/y size mismatch");
    if (!s.y_err.empty() && s.y_err.size() != s.y.size())
      throw std::invalid_argument("plot series: y_err size mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0.0) || !(s.y[i] > 0.0) || !std::isfinite(s.x[i]) ||
          !std::isfinite(s.y[i]))
        continue;
      lo_x = std::min(lo_x, std::log10(s.x[i]));
      hi_x = std::max(hi_x, std::log10(s.x[i]));
      double y_low = s.y[i];
      double y_high = s.y[i];
      if (!s.y_err.empty() && std::isfinite(s.y_err[i])) {
        y_high = s.y[i] + s.y_err[i];
        if (s.y[i] - s.y_err[i] > 0.0) y_low = s.y[i] - s.y_err[i];
      }
      lo_y = std::min(lo_y, std::log10(y_low));
      hi_y = std::max(hi_y, std::log10(y_high));
    }
  }
  const bool empty = !(lo_x <= hi_x) || !(lo_y <= hi_y);
  if (empty) {
    lo_x = 0.0;
    hi_x = 1.0;
    lo_y = 0.0;
    hi_y = 1.0;
  }
  if (hi_x - lo_x < 1e-9) {
    lo_x -= 0.5;
    hi_x += 0.5;
  }
  if (hi_y - lo_y < 1e-9) {
    lo_y -= 0.5;
    hi_y += 0.5;
  }
  // A little padding so markers do not sit on the frame.
  const double pad_x = 0.05 * (hi_x - lo_x);
  const double pad_y = 0.05 * (hi_y - lo_y);
  lo_x -= pad_x;
  hi_x += pad_x;
  lo_y -= pad_y;
  hi_y += pad_y;

  const auto sx = [&](double log_x) {
    return kLeft + (log_x - lo_x) / (hi_x - lo_x) * (kWidth - kLeft - kRight);
  };
  const auto sy = [&](double log_y) {
    return kHeight - kBottom -
           (log_y - lo_y) / (hi_y - lo_y) * (kHeight - kTop - kBottom);
  };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
     << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
     << kHeight << "\">\n";
  os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << escape(title) << "</text>\n";

  // Frame.
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\""
     << kWidth - kLeft - kRight << "\" height=\"" << kHeight - kTop - kBottom
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  // Decade ticks and gridlines.
  for (int e = static_cast<int>(std::ceil(lo_x)); e <= static_cast<int>(std::floor(hi_x)); ++e) {
    const double px = sx(e);
    os << "<line x1=\"" << fmt(px) << "\" y1=\"" << kTop << "\" x2=\""
       << fmt(px) << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << fmt(px) << "\" y=\"" << kHeight - kBottom + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"12\">1e"
       << e << "</text>\n";
  }
  for (int e = static_cast<int>(std::ceil(lo_y)); e <= static_cast<int>(std::floor(hi_y)); ++e) {
    const double py = sy(e);
    os << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(py) << "\" x2=\""
       << kWidth - kRight << "\" y2=\"" << fmt(py)
       << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(py + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"12\">1e"
       << e << "</text>\n";
  }

  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << kHeight / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        "transform=\"rotate(-90 18 "
     << kHeight / 2 << ")\">" << escape(y_label) << "</text>\n";

  std::size_t color_index = 0;
  for (const PlotSeries& s : series) {
    const char* color = kPalette[color_index % (sizeof(kPalette) / sizeof(kPalette[0]))];
    ++color_index;

    std::string path;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0.0) || !(s.y[i] > 0.0) || !std::isfinite(s.x[i]) ||
          !std::isfinite(s.y[i]))
        continue;
      const double px = sx(std::log10(s.x[i]));
      const double py = sy(std::log10(s.y[i]));
      path += path.empty() ? "M" : " L";
      path += fmt(px) + "," + fmt(py);

      if (!s.y_err.empty() && std::isfinite(s.y_err[i]) && s.y_err[i] > 0.0) {
        const double top = sy(std::log10(s.y[i] + s.y_err[i]));
        const double bottom_value = s.y[i] - s.y_err[i];
        const double bottom =
            bottom_value > 0.0 ? sy(std::log10(bottom_value)) : kHeight - kBottom;
        os << "<line x1=\"" << fmt(px) << "\" y1=\"" << fmt(top) << "\" x2=\""
           << fmt(px) << "\" y2=\"" << fmt(bottom) << "\" stroke=\"" << color
           << "\" stroke-width=\"1\"/>\n";
      }
      os << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py)
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    if (!path.empty())
      os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color
         << "\" stroke-width=\"1.5\"/>\n";
    if (!s.label.empty()) {
      const double ly = kTop + 16.0 * static_cast<double>(color_index);
      os << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << ly - 9
         << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
      os << "<text x=\"" << kWidth - kRight - 135 << "\" y=\"" << ly
         << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.label)
         << "</text>\n";
    }
  }
  if (empty)
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"14\" fill=\"#888888\">no plottable points</text>\n";
  os << "</svg>\n";
}

}  // namespace vexp
