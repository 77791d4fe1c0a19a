#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "coe/measure.hpp"
#include "coe/parallel.hpp"
#include "coe/trace.hpp"

namespace coe {

/// Mean of the L x H block of attention mass the final token puts on visual
/// tokens. Throws MetricError("attention block missing") without one.
double visual_attention(const SampleRecord& sample);

/// Distance between the final-layer hidden states of the two contexts.
double output_divergence(const SampleRecord& sample, const Measure& measure);

struct BaselineScore {
  std::uint32_t sample_id = 0;
  std::optional<double> visual_attention;
  double output_divergence = 0.0;
  MeasureKind metric = MeasureKind::cosine;
};

/// One score per record, ordered by sample_id.
std::vector<BaselineScore> baseline_scores(const RecordSource& trace,
                                           const Measure& measure,
                                           int threads = default_thread_count());

}  // namespace coe
