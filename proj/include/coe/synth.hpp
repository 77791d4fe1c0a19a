#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "coe/metrics.hpp"
#include "coe/parallel.hpp"
#include "coe/trace.hpp"

namespace coe {

/// Parameters of a synthetic trace with a planted visual integration point.
///
/// Samples 0..n_vt-1 form the vision-dependent group, the next n_t the
/// vision-independent group. For sample i and layer l the generator draws a
/// target distance
///
///   t = clamp(base_distance + gap(i, l) + noise_sigma * eps, 0, upper)
///
/// where gap is post_gap for VT samples at layers >= l_star_planted, pre_gap
/// for VT samples below it and 0 for T samples; upper is 2 for cosine and
/// unbounded otherwise. The stored embeddings realize d(vis, blind) = t up to
/// float32 rounding.
struct SynthConfig {
  static constexpr int kSchemaVersion = 1;

  int num_layers = 32;
  int hidden_dim = 128;
  int num_heads = 8;  ///< 0 disables attention blocks
  std::uint64_t n_vt = 32;
  std::uint64_t n_t = 32;
  int l_star_planted = 18;
  double pre_gap = 0.0;
  double post_gap = 0.5;
  double noise_sigma = 0.02;
  double base_distance = 0.3;
  MetricKind metric = MetricKind::cosine;
  /// Logistic correctness link P(correct) = sigmoid(beta * (mean post-VIP
  /// target - base_distance)); nullopt leaves correctness unknown.
  std::optional<double> logistic_beta;
  int logitlens_k = 0;  ///< 0 disables logit-lens blocks
  int vocab_size = 64;
  std::uint64_t seed = 0;
  std::string model_id = "synthetic";
};

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws SynthError naming the first invalid field.
void validate(const SynthConfig& config);

TraceFile generate(const SynthConfig& config, int threads = default_thread_count());

/// Closed-form expected layer distance per group (entry l-1 is layer l).
struct ExpectedCurve {
  Eigen::VectorXd vt;
  Eigen::VectorXd t;
  Eigen::VectorXd all;
};

ExpectedCurve expected_curve(const SynthConfig& config);

/// E[clamp(X, lo, hi)] for X ~ N(mean, sigma^2); hi may be +inf.
double clamped_normal_mean(double mean, double sigma, double lo, double hi);

/// Post-VIP gap g for which g equals `margin` times the expected coefficient
/// of variation threshold alpha * std_ALL / mean_ALL at the planted layers.
/// Throws SynthError when the metric cannot reach it (cosine caps at 2).
double planted_gap_for_margin(const SynthConfig& config, double margin,
                              double alpha = 1.0);

}  // namespace coe
