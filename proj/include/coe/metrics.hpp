#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace coe {

/// Distances between the vision and blind hidden states of one layer.
enum class MetricKind {
  cosine,           ///< 1 - cos(z1, z2), in [0, 2]
  l2,               ///< ||z1 - z2||
  squared_l2_half,  ///< ||z1 - z2||^2 / 2
};

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string_view to_string(MetricKind kind);
/// Accepts "cosine", "l2", "sqhalf" (and "squared_l2_half").
std::optional<MetricKind> parse_metric(std::string_view name);

namespace detail {

// Cosine values below this are treated as corrupted input rather than noise.
inline constexpr double kCosineSlack = 1e-6;

template <typename A, typename B>
void check_lengths(const Eigen::MatrixBase<A>& z1, const Eigen::MatrixBase<B>& z2) {
  if (z1.size() != z2.size())
    throw MetricError("length mismatch: " + std::to_string(z1.size()) + " vs " +
                      std::to_string(z2.size()));
}

}  // namespace detail

/// Distance accumulated in double precision, strictly left to right, so the
/// result never depends on vectorization or argument order.
template <typename A, typename B>
double distance(MetricKind kind, const Eigen::MatrixBase<A>& z1,
                const Eigen::MatrixBase<B>& z2) {
  detail::check_lengths(z1, z2);
  const Eigen::Index n = z1.size();
  switch (kind) {
    case MetricKind::cosine: {
      double dot = 0.0, n1 = 0.0, n2 = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double a = static_cast<double>(z1.coeff(i));
        const double b = static_cast<double>(z2.coeff(i));
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
      }
      if (!(n1 > 0.0) || !(n2 > 0.0))
        throw MetricError("undefined cosine distance: zero vector");
      // n1 * n2 commutes, so swapping the arguments gives identical bits.
      const double d = 1.0 - dot / std::sqrt(n1 * n2);
      if (d < -detail::kCosineSlack || d > 2.0 + detail::kCosineSlack)
        throw MetricError("cosine distance out of range: corrupted input");
      return std::clamp(d, 0.0, 2.0);
    }
    case MetricKind::l2:
    case MetricKind::squared_l2_half: {
      double sq = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double diff = static_cast<double>(z1.coeff(i)) -
                            static_cast<double>(z2.coeff(i));
        sq += diff * diff;
      }
      return kind == MetricKind::l2 ? std::sqrt(sq) : 0.5 * sq;
    }
  }
  throw MetricError("unknown metric");
}

/// Dimension-free variant: l2 / sqrt(d_z), squared_l2_half / d_z, cosine as is.
template <typename A, typename B>
double normalized_distance(MetricKind kind, const Eigen::MatrixBase<A>& z1,
                           const Eigen::MatrixBase<B>& z2, Eigen::Index dim) {
  if (dim < 1) throw MetricError("dimension must be positive");
  const double d = distance(kind, z1, z2);
  switch (kind) {
    case MetricKind::cosine:
      return d;
    case MetricKind::l2:
      return d / std::sqrt(static_cast<double>(dim));
    case MetricKind::squared_l2_half:
      return d / static_cast<double>(dim);
  }
  return d;
}

}  // namespace coe
