#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>

#include <Eigen/Core>

#include "coe/parallel.hpp"

namespace coe {

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PValueMethod { t_approx, permutation };

std::string_view to_string(PValueMethod method);

struct CorrelationReport {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  PValueMethod method = PValueMethod::t_approx;
  std::optional<std::uint64_t> seed;
  std::size_t permutations = 0;
};

struct SpearmanOptions {
  PValueMethod method = PValueMethod::t_approx;
  std::uint64_t seed = 0;
  std::size_t permutations = 10000;
  int threads = default_thread_count();
};

/// 1-based ranks; tied values share the mean of the ranks they span.
Eigen::VectorXd average_ranks(std::span<const double> values);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

/// Spearman's rank correlation with a t-approximation or seeded permutation
/// p-value. Throws StatsError("degenerate ranks") when either side is constant.
CorrelationReport spearman(std::span<const double> x, std::span<const double> y,
                           const SpearmanOptions& options = {});

/// Difference of group means at one layer with its standard error. Positive z
/// means the VT group's distances exceed the T group's.
struct TwoSampleStat {
  int layer = 0;
  double delta = 0.0;
  double se = 0.0;
  double z = 0.0;
  std::size_t n_vt = 0;
  std::size_t n_t = 0;
};

TwoSampleStat two_sample_layer_stat(std::span<const double> vt,
                                    std::span<const double> t, int layer = 0);
TwoSampleStat two_sample_from_moments(double mean_vt, double std_vt,
                                      std::size_t n_vt, double mean_t,
                                      double std_t, std::size_t n_t,
                                      int layer = 0);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< n-1 denominator; NaN for n < 2
  std::size_t n = 0;
};

/// Two-pass mean and sample standard deviation, summed in input order.
Summary summarize(std::span<const double> values);

}  // namespace coe
