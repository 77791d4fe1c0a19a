#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "coe/curves.hpp"

namespace coe {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Shortest decimal that round-trips; "nan" / "inf" / "-inf" otherwise.
std::string format_number(double value);

/// Long-format rows (layer, group, mean, std, divergence), three per layer,
/// preceded by a "# vip: <layer|none>" metadata row.
void emit_curve_plotdata(const LayerCurve& curve, std::optional<int> l_star,
                         std::ostream& out);

/// Self-contained SVG with the VT and T mean curves and, when l_star is set,
/// one vertical marker at that layer.
void emit_curve_svg(const LayerCurve& curve, std::optional<int> l_star,
                    std::ostream& out, std::string_view title = {});

}  // namespace coe
