#include "coe/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>

#include "coe/random.hpp"

namespace coe {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr std::uint64_t kChunk = 4096;

struct Moments {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    count += 1.0;
    const double delta = x - mean;
    mean += delta / count;
    m2 += delta * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.count == 0.0) return;
    const double total = count + o.count;
    const double delta = o.mean - mean;
    mean += delta * o.count / total;
    m2 += o.m2 + delta * delta * count * o.count / total;
    count = total;
  }
  double variance() const { return count > 1.0 ? m2 / (count - 1.0) : 0.0; }
};

// Half squared norms of shift + scale * eps, merged chunk by chunk in order.
Moments sample_group(const Eigen::VectorXd& shift, double scale, std::uint64_t n,
                     std::uint64_t seed, std::uint32_t group, int threads) {
  const std::uint64_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<Moments> partial(chunks);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        Eigen::VectorXd delta(shift.size());
        const std::uint64_t end = std::min<std::uint64_t>(n, (c + 1) * kChunk);
        for (std::uint64_t i = c * kChunk; i < end; ++i) {
          CounterRng rng(seed, static_cast<std::uint32_t>(i),
                         static_cast<std::uint32_t>(i >> 32), group);
          for (Eigen::Index k = 0; k < delta.size(); ++k)
            delta[k] = shift[k] + scale * rng.normal();
          partial[c].add(0.5 * delta.squaredNorm());
        }
      },
      threads);
  Moments total;
  for (const auto& p : partial) total.merge(p);
  return total;
}

}  // namespace

double gaussian_log_density(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& mean,
                            const Eigen::Ref<const Eigen::MatrixXd>& cov) {
  if (x.size() != mean.size() || cov.rows() != x.size() || cov.cols() != x.size())
    throw std::invalid_argument("gaussian_log_density: dimension mismatch");
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("covariance is not positive definite");
  const Eigen::VectorXd whitened = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const auto d = static_cast<double>(x.size());
  return -0.5 * (d * kLog2Pi + log_det + whitened.squaredNorm());
}

double nll_identity_residual(const Eigen::Ref<const Eigen::VectorXd>& z1,
                             const Eigen::Ref<const Eigen::VectorXd>& z2) {
  if (z1.size() != z2.size())
    throw std::invalid_argument("nll_identity_residual: length mismatch");
  const auto d = static_cast<double>(z1.size());
  const double half_sq = 0.5 * (z1 - z2).squaredNorm();
  const double log_density = gaussian_log_density(
      z1, z2, Eigen::MatrixXd::Identity(z1.size(), z1.size()));
  const double log_c = -0.5 * d * kLog2Pi;
  return half_sq - (-log_density + log_c);
}

double gaussian_kl_to_standard(const Eigen::Ref<const Eigen::VectorXd>& mean,
                               double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("scale must be > 0");
  const auto d = static_cast<double>(mean.size());
  const double var = scale * scale;
  return 0.5 * (d * var + mean.squaredNorm() - d - d * std::log(var));
}

double gaussian_entropy(Eigen::Index dim, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("scale must be > 0");
  return 0.5 * static_cast<double>(dim) *
         (kLog2Pi + 1.0 + std::log(scale * scale));
}

DecompositionReport theorem1_decomposition_check(
    const GaussianPopulationSpec& spec, int threads) {
  if (spec.shift_vt.size() != spec.shift_t.size() || spec.shift_vt.size() == 0)
    throw std::invalid_argument("group shifts must share a positive dimension");
  if (!(spec.scale_vt > 0.0) || !(spec.scale_t > 0.0))
    throw std::invalid_argument("scales must be > 0");
  if (spec.n_vt < 2 || spec.n_t < 2)
    throw std::invalid_argument("need at least 2 samples per group");

  const Moments vt = sample_group(spec.shift_vt, spec.scale_vt, spec.n_vt,
                                  spec.seed, 0x56540000u, threads);
  const Moments t = sample_group(spec.shift_t, spec.scale_t, spec.n_t, spec.seed,
                                 0x54000000u, threads);

  DecompositionReport r;
  r.lhs_mc = vt.mean - t.mean;
  r.mc_stderr = std::sqrt(vt.variance() / vt.count + t.variance() / t.count);
  r.kl_vt = gaussian_kl_to_standard(spec.shift_vt, spec.scale_vt);
  r.kl_t = gaussian_kl_to_standard(spec.shift_t, spec.scale_t);
  r.entropy_gap = gaussian_entropy(spec.shift_vt.size(), spec.scale_vt) -
                  gaussian_entropy(spec.shift_t.size(), spec.scale_t);
  r.rhs_analytic = r.kl_vt - r.kl_t + r.entropy_gap;
  r.pass = std::abs(r.lhs_mc - r.rhs_analytic) <= 3.0 * r.mc_stderr;
  return r;
}

double max_nll_residual(std::size_t pairs, Eigen::Index dim, std::uint64_t seed) {
  Eigen::VectorXd z1(dim), z2(dim);
  double worst = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    CounterRng rng(seed, static_cast<std::uint32_t>(i),
                   static_cast<std::uint32_t>(i >> 32), 0x4E4C4C00u);
    for (Eigen::Index k = 0; k < dim; ++k) z1[k] = rng.normal();
    for (Eigen::Index k = 0; k < dim; ++k) z2[k] = rng.normal();
    worst = std::max(worst, std::abs(nll_identity_residual(z1, z2)));
  }
  return worst;
}

std::vector<NamedPopulation> decomposition_suite(std::uint64_t seed,
                                                 std::uint64_t samples) {
  constexpr Eigen::Index kDim = 8;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(kDim);
  Eigen::VectorXd e1 = zero;
  e1[0] = 1.0;
  Eigen::VectorXd mixed_vt = zero, mixed_t = zero;
  mixed_vt << 0.5, -1.0, 0.25, 0.0, 0.75, 0.0, -0.5, 1.0;
  mixed_t << 0.0, 0.5, 0.0, -0.25, 0.0, 1.0, 0.0, 0.0;

  const auto spec = [&](Eigen::VectorXd vt, Eigen::VectorXd t, double s_vt,
                        double s_t, std::uint64_t index) {
    GaussianPopulationSpec s;
    s.shift_vt = std::move(vt);
    s.shift_t = std::move(t);
    s.scale_vt = s_vt;
    s.scale_t = s_t;
    s.n_vt = s.n_t = samples;
    s.seed = seed + index;
    return s;
  };
  return {
      {"unit-shift", spec(e1, zero, 1.0, 1.0, 0)},
      {"identical", spec(zero, zero, 1.0, 1.0, 1)},
      {"scale-gap", spec(zero, zero, 2.0, 1.0, 2)},
      {"mixed", spec(mixed_vt, mixed_t, 1.5, 0.7, 3)},
      {"swapped", spec(zero, e1, 1.0, 1.0, 4)},
  };
}

}  // namespace coe
