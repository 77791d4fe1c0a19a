#pragma once

#include <optional>
#include <string_view>

#include <Eigen/Core>

#include "coe/logitlens.hpp"
#include "coe/metrics.hpp"
#include "coe/trace.hpp"

namespace coe {

/// Every per-layer distance the toolkit can put between the vision and the
/// blind context of a sample: latent-space metrics and logit-lens divergences.
enum class MeasureKind { cosine, l2, sqhalf, kl, js };

struct Measure {
  MeasureKind kind = MeasureKind::cosine;
  bool normalized = false;
  double lens_epsilon = kDefaultLensEpsilon;

  bool uses_logitlens() const {
    return kind == MeasureKind::kl || kind == MeasureKind::js;
  }
};

std::string_view to_string(MeasureKind kind);
std::optional<MeasureKind> parse_measure(std::string_view name);

/// Throws MetricError when the trace cannot supply the measure (logit-lens
/// divergences on a trace without logit-lens blocks).
void require_supported(const TraceHeader& header, const Measure& measure);

/// d(z_vis^l, z_blind^l) for a 1-based layer. Errors name the sample and layer.
double layer_distance(const SampleRecord& record, int layer,
                      const Measure& measure);

/// All L layer distances, entry l-1 holding layer l.
Eigen::VectorXd layer_distances(const SampleRecord& record,
                                const Measure& measure);

}  // namespace coe
