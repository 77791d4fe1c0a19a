#include "coe/baselines.hpp"

#include <algorithm>

namespace coe {

double visual_attention(const SampleRecord& sample) {
  if (!sample.attention)
    throw MetricError("attention block missing at sample " +
                      std::to_string(sample.sample_id));
  const auto& block = *sample.attention;
  if (block.size() == 0)
    throw MetricError("empty attention block at sample " +
                      std::to_string(sample.sample_id));
  double sum = 0.0;
  for (Eigen::Index l = 0; l < block.rows(); ++l)
    for (Eigen::Index h = 0; h < block.cols(); ++h) sum += block(l, h);
  return sum / static_cast<double>(block.size());
}

double output_divergence(const SampleRecord& sample, const Measure& measure) {
  return layer_distance(sample, static_cast<int>(sample.emb_vis.rows()), measure);
}

std::vector<BaselineScore> baseline_scores(const RecordSource& trace,
                                           const Measure& measure, int threads) {
  require_supported(trace.header(), measure);
  std::vector<BaselineScore> scores(trace.size());
  parallel_for(
      trace.size(),
      [&](std::size_t i) {
        SampleRecord scratch;
        const auto& r = trace.record(i, scratch);
        auto& s = scores[i];
        s.sample_id = r.sample_id;
        s.metric = measure.kind;
        if (r.attention) s.visual_attention = visual_attention(r);
        s.output_divergence = output_divergence(r, measure);
      },
      threads);
  std::sort(scores.begin(), scores.end(),
            [](const BaselineScore& a, const BaselineScore& b) {
              return a.sample_id < b.sample_id;
            });
  return scores;
}

}  // namespace coe
