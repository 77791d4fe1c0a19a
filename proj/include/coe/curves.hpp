#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "coe/measure.hpp"
#include "coe/parallel.hpp"
#include "coe/partition.hpp"
#include "coe/stats.hpp"
#include "coe/trace.hpp"

namespace coe {

/// Per-sample, per-layer distances of a trace. Rows are ordered by sample_id,
/// which makes every downstream reduction independent of record order and of
/// the number of threads used to fill the table.
struct DistanceTable {
  std::vector<std::uint32_t> sample_ids;  ///< ascending
  Eigen::MatrixXd distances;              ///< N x L, column l-1 is layer l
  Measure measure;

  int num_layers() const { return static_cast<int>(distances.cols()); }
  /// Row index of a sample; throws std::out_of_range when absent.
  Eigen::Index row_of(std::uint32_t sample_id) const;
};

DistanceTable compute_distance_table(const RecordSource& trace,
                                     const Measure& measure,
                                     int threads = default_thread_count());

struct GroupMoments {
  int layer = 0;
  Group group = Group::all;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

struct GroupCurve {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::size_t n = 0;
};

/// Layer-wise representation distance of the VT, T and pooled groups.
struct LayerCurve {
  GroupCurve vt;
  GroupCurve t;
  GroupCurve all;
  /// mean_VT - mean_T per layer.
  Eigen::VectorXd divergence;

  int num_layers() const { return static_cast<int>(divergence.size()); }
  const GroupCurve& group(Group g) const;
  GroupMoments moments(int layer, Group g) const;
};

class CurveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws CurveError("degenerate partition") unless both groups hold >= 2
/// samples of the table.
LayerCurve compute_curve(const DistanceTable& table, const Partition& partition);
LayerCurve compute_curve(const RecordSource& trace, const Partition& partition,
                         const Measure& measure,
                         int threads = default_thread_count());

/// Distances of one group at one layer, in sample_id order.
std::vector<double> group_distances(const DistanceTable& table,
                                    const Partition& partition, Group group,
                                    int layer);

// ---------------------------------------------------------------------------
// Visual integration point

enum class VipMode {
  first,       ///< smallest layer whose threshold condition holds
  persistent,  ///< smallest layer from which the condition holds up to L-1
};

std::string_view to_string(VipMode mode);
std::optional<VipMode> parse_vip_mode(std::string_view name);

struct VipConfig {
  double alpha = 1.0;
  VipMode mode = VipMode::persistent;
  /// Post-VIP divergence floor for the hypothesis check.
  std::optional<double> tau;
  /// Pre-VIP tolerance for "divergence is about zero". Defaults to
  /// default_pre_epsilon(curve).
  std::optional<double> pre_epsilon;
};

struct VipResult {
  std::optional<int> l_star;
  VipMode mode = VipMode::persistent;
  double alpha = 1.0;
  /// alpha * std_ALL / mean_ALL for layers 1..L; NaN where mean_ALL is 0.
  Eigen::VectorXd thresholds;
  Eigen::VectorXd divergence;
  /// Condition at candidate layers 1..L-1.
  std::vector<bool> satisfied;
  /// Two-sample z per layer; z is NaN where both group variances vanish.
  std::vector<TwoSampleStat> layer_stats;
};

/// A candidate layer l qualifies when divergence[l] is positive and at least
/// alpha * std_ALL[l] / mean_ALL[l].
VipResult estimate_vip(const LayerCurve& curve, const VipConfig& config = {});

struct LayerCheck {
  int layer = 0;
  double divergence = 0.0;
  bool post = false;
  bool ok = false;
};

struct HypothesisReport {
  bool holds = false;
  int l_star = 0;
  double tau = 0.0;
  double pre_epsilon = 0.0;
  std::vector<LayerCheck> layers;
  /// One line per failing layer.
  std::vector<std::string> failures;
};

/// divergence > tau on every layer >= l_star and |divergence| <= pre_epsilon
/// before it. config.tau must be set.
HypothesisReport check_hypothesis(const LayerCurve& curve, int l_star,
                                  const VipConfig& config);

/// Twice the standard error of the layer-1 divergence.
double default_pre_epsilon(const LayerCurve& curve);

/// Published VIP layers for known checkpoints (case-insensitive; Hugging Face
/// repository ids are accepted as aliases).
std::optional<int> lookup_known_vip(std::string_view model_id);
const std::vector<std::pair<std::string, int>>& known_vips();

}  // namespace coe
