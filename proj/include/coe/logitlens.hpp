#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "coe/trace.hpp"

namespace coe {

enum class DivergenceKind { kl, js };

inline constexpr double kDefaultLensEpsilon = 1e-9;

std::string_view to_string(DivergenceKind kind);
std::optional<DivergenceKind> parse_divergence(std::string_view name);

/// Truncated output distribution of one layer: the stored top-K entries plus
/// whatever mass they do not cover.
struct TopKDistribution {
  std::span<const TokenProb> entries;

  /// 1 - sum(prob), clipped to [0, 1].
  double tail_mass() const;
};

/// KL(p || q) or JS(p, q) in nats over the union of the two supports. A token
/// missing from one side gets probability `epsilon` there, then each side is
/// renormalized over the union.
double divergence(DivergenceKind kind, TopKDistribution p, TopKDistribution q,
                  double epsilon = kDefaultLensEpsilon);

}  // namespace coe
