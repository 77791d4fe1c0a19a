#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "coe/curves.hpp"
#include "coe/measure.hpp"
#include "coe/partition.hpp"
#include "coe/stats.hpp"
#include "coe/trace.hpp"

namespace coe {

/// Total visual integration: mean layer distance over l_star..L inclusive.
/// A high score means vision reshaped the late layers; a low one points to a
/// strong language prior.
double tvi_post(const SampleRecord& sample, int l_star, const Measure& measure);

/// Mean layer distance over 1..l_star-1; nullopt when l_star is 1.
std::optional<double> tvi_pre(const SampleRecord& sample, int l_star,
                              const Measure& measure);

/// The same aggregates over a precomputed row of layer distances.
double tvi_post(const Eigen::Ref<const Eigen::RowVectorXd>& layer_distances,
                int l_star);
std::optional<double> tvi_pre(
    const Eigen::Ref<const Eigen::RowVectorXd>& layer_distances, int l_star);

struct TviScore {
  std::uint32_t sample_id = 0;
  Group group = Group::all;
  double tvi_post = 0.0;
  std::optional<double> tvi_pre;
  int l_star_used = 0;
  MeasureKind metric = MeasureKind::cosine;
  bool normalized = false;
};

struct TviGroupSummary {
  Group group = Group::all;
  Summary post;
  Summary pre;  ///< over samples with a defined tvi_pre
};

struct TviBatch {
  std::vector<TviScore> scores;          ///< ordered by sample_id
  std::vector<TviGroupSummary> summary;  ///< VT and T (with a partition), then ALL
};

/// Scores every sample. With a partition each score is tagged with its group
/// and the summary carries VT, T and ALL; without one only ALL.
TviBatch tvi_batch(const DistanceTable& table, const Partition* partition,
                   int l_star);
TviBatch tvi_batch(const RecordSource& trace, const Partition* partition,
                   int l_star, const Measure& measure,
                   int threads = default_thread_count());

}  // namespace coe
