#include "coe/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace coe {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

void emit_curve_plotdata(const LayerCurve& curve, std::optional<int> l_star,
                         std::ostream& out) {
  out << "# vip: " << (l_star ? std::to_string(*l_star) : "none") << '\n';
  out << "layer,group,mean,std,divergence\n";
  for (int l = 1; l <= curve.num_layers(); ++l)
    for (Group g : {Group::vt, Group::t, Group::all}) {
      const auto m = curve.moments(l, g);
      out << l << ',' << to_string(g) << ',' << format_number(m.mean) << ','
          << format_number(m.std) << ',' << format_number(curve.divergence[l - 1])
          << '\n';
    }
}

namespace {

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

void emit_curve_svg(const LayerCurve& curve, std::optional<int> l_star,
                    std::ostream& out, std::string_view title) {
  constexpr double kWidth = 640, kHeight = 400;
  constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  const int layers = curve.num_layers();

  double y_max = 0.0;
  for (int l = 0; l < layers; ++l) {
    for (const auto* c : {&curve.vt, &curve.t})
      if (std::isfinite(c->mean[l])) y_max = std::max(y_max, c->mean[l]);
  }
  if (!(y_max > 0.0)) y_max = 1.0;
  y_max *= 1.1;

  const auto x_of = [&](double layer) {
    return kLeft + (layer - 1.0) / std::max(1, layers - 1) *
                       (kWidth - kLeft - kRight);
  };
  const auto y_of = [&](double v) {
    return kHeight - kBottom - v / y_max * (kHeight - kTop - kBottom);
  };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
      << kHeight << "\">\n";
  out << "<metadata>vip: " << (l_star ? std::to_string(*l_star) : "none")
      << "</metadata>\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty())
    out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
        << "</text>\n";

  // Axes.
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
      << kWidth - kRight << "\" y2=\"" << kHeight - kBottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
      << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">layer</text>\n";
  out << "<text x=\"14\" y=\"" << kHeight / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
      << kHeight / 2 << ")\" text-anchor=\"middle\">distance</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = y_max * tick / 4.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(y_of(v) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << fixed(v) << "</text>\n";
  }
  for (int l = 1; l <= layers; l += std::max(1, layers / 8))
    out << "<text x=\"" << fixed(x_of(l)) << "\" y=\"" << kHeight - kBottom + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << l << "</text>\n";

  const struct {
    const GroupCurve* curve;
    const char* css;
    const char* color;
  } series[] = {{&curve.vt, "curve-vt", "#d62728"}, {&curve.t, "curve-t", "#1f77b4"}};
  for (const auto& s : series) {
    out << "<polyline class=\"" << s.css << "\" fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"2\" points=\"";
    for (int l = 1; l <= layers; ++l) {
      const double v = s.curve->mean[l - 1];
      out << (l > 1 ? " " : "") << fixed(x_of(l)) << ','
          << fixed(y_of(std::isfinite(v) ? v : 0.0));
    }
    out << "\"/>\n";
  }
  out << "<text x=\"" << kWidth - kRight - 4 << "\" y=\"" << kTop
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#d62728\">D_VT</text>\n";
  out << "<text x=\"" << kWidth - kRight - 4 << "\" y=\"" << kTop + 14
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#1f77b4\">D_T</text>\n";

  if (l_star) {
    const double x = x_of(*l_star);
    out << "<line class=\"vip-marker\" x1=\"" << fixed(x) << "\" y1=\"" << kTop
        << "\" x2=\"" << fixed(x) << "\" y2=\"" << kHeight - kBottom
        << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    out << "<text x=\"" << fixed(x + 4) << "\" y=\"" << kTop + 12
        << "\" font-family=\"sans-serif\" font-size=\"11\">l* = " << *l_star
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace coe
