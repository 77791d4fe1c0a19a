#include <doctest.h>

#include <sstream>
#include <string>

#include "coe/report.hpp"

using namespace coe;

namespace {

LayerCurve two_layer_curve() {
  LayerCurve c;
  for (auto* g : {&c.vt, &c.t, &c.all}) {
    g->mean = Eigen::Vector2d(0.2, 0.4);
    g->std = Eigen::Vector2d(0.01, 0.02);
    g->n = 4;
  }
  c.vt.mean[1] = 0.9;
  c.divergence = c.vt.mean - c.t.mean;
  return c;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("format_number round-trips") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(2.0) == "2");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("plot data rows") {
  std::ostringstream os;
  emit_curve_plotdata(two_layer_curve(), std::nullopt, os);
  const auto s = os.str();
  CHECK(s.rfind("# vip: none\nlayer,group,mean,std,divergence\n", 0) == 0);
  CHECK(count(s, "\n") == 2 + 6);
  CHECK(s.find("2,VT,0.9,0.02,0.5\n") != std::string::npos);
}

TEST_CASE("svg marker") {
  std::ostringstream with, without;
  emit_curve_svg(two_layer_curve(), 1, with, "a <b> & c");
  emit_curve_svg(two_layer_curve(), std::nullopt, without);
  CHECK(count(with.str(), "class=\"vip-marker\"") == 1);
  CHECK(with.str().find("<metadata>vip: 1</metadata>") != std::string::npos);
  CHECK(with.str().find("a &lt;b&gt; &amp; c") != std::string::npos);
  CHECK(count(without.str(), "vip-marker") == 0);
  CHECK(without.str().find("vip: none") != std::string::npos);
}
