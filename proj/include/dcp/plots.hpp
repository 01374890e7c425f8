#pragma once

// Minimal SVG renderings of report tables. Coordinates are printed with fixed
// precision so files are byte-stable.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "dcp/eval.hpp"

namespace dcp::plots {

namespace detail {

inline constexpr double kWidth = 480;
inline constexpr double kHeight = 360;
inline constexpr double kMargin = 48;

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); }
  double py(double y) const { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

inline void open(std::ostringstream& out, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel, const Frame& f) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n"
      << "<line x1=\"" << fmt(f.px(f.x0)) << "\" y1=\"" << fmt(f.py(f.y0)) << "\" x2=\"" << fmt(f.px(f.x1))
      << "\" y2=\"" << fmt(f.py(f.y0)) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << fmt(f.px(f.x0)) << "\" y1=\"" << fmt(f.py(f.y0)) << "\" x2=\"" << fmt(f.px(f.x0))
      << "\" y2=\"" << fmt(f.py(f.y1)) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"" << fmt(kHeight - 10) << "\" text-anchor=\"middle\" font-size=\"12\">"
      << xlabel << "</text>\n"
      << "<text x=\"14\" y=\"" << fmt(kHeight / 2) << "\" transform=\"rotate(-90 14 " << fmt(kHeight / 2)
      << ")\" text-anchor=\"middle\" font-size=\"12\">" << ylabel << "</text>\n"
      << "<text x=\"" << fmt(f.px(f.x0)) << "\" y=\"" << fmt(f.py(f.y0) + 14) << "\" font-size=\"10\">" << fmt(f.x0)
      << "</text>\n"
      << "<text x=\"" << fmt(f.px(f.x1)) << "\" y=\"" << fmt(f.py(f.y0) + 14) << "\" font-size=\"10\">" << fmt(f.x1)
      << "</text>\n"
      << "<text x=\"" << fmt(4) << "\" y=\"" << fmt(f.py(f.y1)) << "\" font-size=\"10\">" << fmt(f.y1) << "</text>\n";
}

}  // namespace detail

/// Empirical coverage against confidence level with the identity diagonal.
inline std::string calibration_curve_svg(const EvaluationReport& r) {
  using namespace detail;
  const Frame f{0, 1, 0, 1};
  std::ostringstream out;
  open(out, r.model + " calibration", "confidence level", "coverage", f);
  out << "<line x1=\"" << fmt(f.px(0)) << "\" y1=\"" << fmt(f.py(0)) << "\" x2=\"" << fmt(f.px(1)) << "\" y2=\""
      << fmt(f.py(1)) << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"steelblue\" points=\"";
  for (const auto& p : r.curve.points) out << fmt(f.px(p.cl)) << ',' << fmt(f.py(p.coverage)) << ' ';
  out << "\"/>\n";
  for (const auto& p : r.curve.points)
    out << "<circle cx=\"" << fmt(f.px(p.cl)) << "\" cy=\"" << fmt(f.py(p.coverage)) << "\" r=\"3\" fill=\"steelblue\"/>\n";
  out << "</svg>\n";
  return out.str();
}

/// Box (q1..q3, median) with min/max whiskers of interval widths per level.
inline std::string width_box_svg(const EvaluationReport& r) {
  using namespace detail;
  double top = 0.0;
  for (const auto& w : r.widths)
    if (std::isfinite(w.max)) top = std::max(top, w.max);
  if (top <= 0.0) top = 1.0;
  const Frame f{0, 1, 0, top};
  std::ostringstream out;
  open(out, r.model + " interval widths", "confidence level", "width", f);
  for (const auto& w : r.widths) {
    if (!std::isfinite(w.median)) continue;
    const double x = f.px(w.cl);
    out << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(f.py(w.min)) << "\" x2=\"" << fmt(x) << "\" y2=\""
        << fmt(f.py(w.max)) << "\" stroke=\"black\"/>\n"
        << "<rect x=\"" << fmt(x - 6) << "\" y=\"" << fmt(f.py(w.q3)) << "\" width=\"12\" height=\""
        << fmt(f.py(w.q1) - f.py(w.q3)) << "\" fill=\"lightsteelblue\" stroke=\"black\"/>\n"
        << "<line x1=\"" << fmt(x - 6) << "\" y1=\"" << fmt(f.py(w.median)) << "\" x2=\"" << fmt(x + 6) << "\" y2=\""
        << fmt(f.py(w.median)) << "\" stroke=\"darkred\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// Ensemble standard deviation against absolute error on the test set.
inline std::string variance_error_svg(const EvaluationReport& r) {
  using namespace detail;
  const auto& ve = r.variance_error;
  double xmax = 0.0, ymax = 0.0;
  for (double s : ve.sigma) xmax = std::max(xmax, s);
  for (double e : ve.abs_error) ymax = std::max(ymax, e);
  if (xmax <= 0.0) xmax = 1.0;
  if (ymax <= 0.0) ymax = 1.0;
  const Frame f{0, xmax, 0, ymax};
  std::ostringstream out;
  open(out, r.model + " sigma vs |error|", "ensemble standard deviation", "absolute error", f);
  for (std::size_t i = 0; i < ve.sigma.size(); ++i)
    out << "<circle cx=\"" << fmt(f.px(ve.sigma[i])) << "\" cy=\"" << fmt(f.py(ve.abs_error[i]))
        << "\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace dcp::plots
