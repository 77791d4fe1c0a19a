#include "coe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "coe/random.hpp"

namespace coe {

std::string_view to_string(PValueMethod method) {
  return method == PValueMethod::t_approx ? "t_approx" : "permutation";
}

Eigen::VectorXd average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  Eigen::VectorXd ranks(static_cast<Eigen::Index>(n));
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) hold ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      ranks[static_cast<Eigen::Index>(order[k])] = rank;
    i = j;
  }
  return ranks;
}

namespace {

constexpr int kMaxIterations = 500;
constexpr double kTiny = 1e-300;
constexpr double kEps = 1e-16;

double beta_continued_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw StatsError("incomplete beta: continued fraction did not converge");
}

// Pearson correlation of two already-centered vectors.
double centered_correlation(const Eigen::VectorXd& dx, const Eigen::VectorXd& dy,
                            double denom) {
  double cross = 0.0;
  for (Eigen::Index i = 0; i < dx.size(); ++i) cross += dx[i] * dy[i];
  return std::clamp(cross / denom, -1.0, 1.0);
}

Eigen::VectorXd centered(const Eigen::VectorXd& v) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sum += v[i];
  const double mean = sum / static_cast<double>(v.size());
  return (v.array() - mean).matrix();
}

double sum_squares(const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += v[i] * v[i];
  return s;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw StatsError("incomplete beta: a, b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw StatsError("t distribution needs dof > 0");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t)), 0.0, 1.0);
}

CorrelationReport spearman(std::span<const double> x, std::span<const double> y,
                           const SpearmanOptions& options) {
  if (x.size() != y.size())
    throw StatsError("spearman: length mismatch " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  const std::size_t n = x.size();
  if (n < 3) throw StatsError("spearman: need at least 3 pairs, got " + std::to_string(n));

  const Eigen::VectorXd dx = centered(average_ranks(x));
  const Eigen::VectorXd dy = centered(average_ranks(y));
  const double sxx = sum_squares(dx);
  const double syy = sum_squares(dy);
  if (!(sxx > 0.0) || !(syy > 0.0)) throw StatsError("degenerate ranks");
  const double denom = std::sqrt(sxx * syy);
  const double rho = centered_correlation(dx, dy, denom);

  CorrelationReport report;
  report.rho = rho;
  report.n = n;
  report.method = options.method;

  if (options.method == PValueMethod::t_approx) {
    const double dof = static_cast<double>(n - 2);
    if (std::abs(rho) >= 1.0) {
      report.p_value = 0.0;
    } else {
      const double t = rho * std::sqrt(dof / (1.0 - rho * rho));
      report.p_value = student_t_two_sided_p(t, dof);
    }
    return report;
  }

  if (options.permutations == 0) throw StatsError("spearman: permutations must be > 0");
  report.seed = options.seed;
  report.permutations = options.permutations;
  // Ties in recomputed sums can move a permuted statistic by a few ulps.
  const double cutoff = std::abs(rho) - 1e-12;
  std::vector<std::uint8_t> extreme(options.permutations, 0);
  parallel_for(
      options.permutations,
      [&](std::size_t k) {
        CounterRng rng(options.seed, static_cast<std::uint32_t>(k),
                       static_cast<std::uint32_t>(k >> 32), 0x5045524Du);
        Eigen::VectorXd shuffled = dy;
        for (Eigen::Index i = shuffled.size() - 1; i > 0; --i) {
          const auto j = static_cast<Eigen::Index>(
              rng.below(static_cast<std::uint64_t>(i + 1)));
          std::swap(shuffled[i], shuffled[j]);
        }
        extreme[k] = std::abs(centered_correlation(dx, shuffled, denom)) >= cutoff;
      },
      options.threads);
  std::size_t count = 0;
  for (auto e : extreme) count += e;
  report.p_value = static_cast<double>(1 + count) /
                   static_cast<double>(1 + options.permutations);
  return report;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n < 2) {
    s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.n - 1));
  return s;
}

TwoSampleStat two_sample_from_moments(double mean_vt, double std_vt,
                                      std::size_t n_vt, double mean_t,
                                      double std_t, std::size_t n_t, int layer) {
  if (n_vt < 2 || n_t < 2)
    throw StatsError("two-sample statistic needs at least 2 samples per group");
  TwoSampleStat s;
  s.layer = layer;
  s.n_vt = n_vt;
  s.n_t = n_t;
  s.delta = mean_vt - mean_t;
  s.se = std::sqrt(std_vt * std_vt / static_cast<double>(n_vt) +
                   std_t * std_t / static_cast<double>(n_t));
  if (!(s.se > 0.0)) throw StatsError("degenerate variance");
  s.z = s.delta / s.se;
  return s;
}

TwoSampleStat two_sample_layer_stat(std::span<const double> vt,
                                    std::span<const double> t, int layer) {
  const Summary a = summarize(vt);
  const Summary b = summarize(t);
  return two_sample_from_moments(a.mean, a.std, a.n, b.mean, b.std, b.n, layer);
}

}  // namespace coe
