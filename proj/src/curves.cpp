#include "coe/curves.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace coe {

Eigen::Index DistanceTable::row_of(std::uint32_t sample_id) const {
  const auto it = std::lower_bound(sample_ids.begin(), sample_ids.end(), sample_id);
  if (it == sample_ids.end() || *it != sample_id)
    throw std::out_of_range("sample_id " + std::to_string(sample_id) +
                            " not in distance table");
  return static_cast<Eigen::Index>(it - sample_ids.begin());
}

DistanceTable compute_distance_table(const RecordSource& trace,
                                     const Measure& measure, int threads) {
  require_supported(trace.header(), measure);
  const std::size_t n = trace.size();
  const int layers = trace.header().num_layers;

  std::vector<std::uint32_t> ids(n);
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(n), layers);
  parallel_for(
      n,
      [&](std::size_t i) {
        SampleRecord scratch;
        const auto& r = trace.record(i, scratch);
        ids[i] = r.sample_id;
        raw.row(static_cast<Eigen::Index>(i)) = layer_distances(r, measure).transpose();
      },
      threads);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  DistanceTable table;
  table.measure = measure;
  table.sample_ids.resize(n);
  table.distances.resize(static_cast<Eigen::Index>(n), layers);
  for (std::size_t i = 0; i < n; ++i) {
    table.sample_ids[i] = ids[order[i]];
    table.distances.row(static_cast<Eigen::Index>(i)) =
        raw.row(static_cast<Eigen::Index>(order[i]));
  }
  return table;
}

const GroupCurve& LayerCurve::group(Group g) const {
  switch (g) {
    case Group::vt:
      return vt;
    case Group::t:
      return t;
    case Group::all:
      return all;
  }
  return all;
}

GroupMoments LayerCurve::moments(int layer, Group g) const {
  if (layer < 1 || layer > num_layers())
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  const auto& c = group(g);
  return GroupMoments{layer, g, c.mean[layer - 1], c.std[layer - 1], c.n};
}

namespace {

std::vector<Eigen::Index> rows_of(const DistanceTable& table,
                                  const std::vector<std::uint32_t>& ids) {
  std::vector<Eigen::Index> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(table.row_of(id));
  std::sort(rows.begin(), rows.end());
  return rows;
}

GroupCurve moments_over(const DistanceTable& table,
                        const std::vector<Eigen::Index>& rows) {
  const int layers = table.num_layers();
  GroupCurve c;
  c.n = rows.size();
  c.mean.resize(layers);
  c.std.resize(layers);
  std::vector<double> column(rows.size());
  for (int l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      column[i] = table.distances(rows[i], l);
    const Summary s = summarize(column);
    c.mean[l] = s.mean;
    c.std[l] = s.std;
  }
  return c;
}

}  // namespace

std::vector<double> group_distances(const DistanceTable& table,
                                    const Partition& partition, Group group,
                                    int layer) {
  std::vector<Eigen::Index> rows;
  if (group == Group::all) {
    rows.resize(table.sample_ids.size());
    std::iota(rows.begin(), rows.end(), 0);
  } else {
    rows = rows_of(table, group == Group::vt ? partition.vt_ids : partition.t_ids);
  }
  std::vector<double> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(table.distances(r, layer - 1));
  return out;
}

LayerCurve compute_curve(const DistanceTable& table, const Partition& partition) {
  if (partition.vt_ids.size() < 2 || partition.t_ids.size() < 2)
    throw CurveError("degenerate partition: |D_VT| = " +
                     std::to_string(partition.vt_ids.size()) + ", |D_T| = " +
                     std::to_string(partition.t_ids.size()) +
                     " (each group needs at least 2 samples)");
  std::vector<Eigen::Index> all_rows(table.sample_ids.size());
  std::iota(all_rows.begin(), all_rows.end(), 0);

  LayerCurve curve;
  curve.vt = moments_over(table, rows_of(table, partition.vt_ids));
  curve.t = moments_over(table, rows_of(table, partition.t_ids));
  curve.all = moments_over(table, all_rows);
  curve.divergence = curve.vt.mean - curve.t.mean;
  return curve;
}

LayerCurve compute_curve(const RecordSource& trace, const Partition& partition,
                         const Measure& measure, int threads) {
  return compute_curve(compute_distance_table(trace, measure, threads), partition);
}

// ---------------------------------------------------------------------------

std::string_view to_string(VipMode mode) {
  return mode == VipMode::first ? "first" : "persistent";
}

std::optional<VipMode> parse_vip_mode(std::string_view name) {
  if (name == "first") return VipMode::first;
  if (name == "persistent") return VipMode::persistent;
  return std::nullopt;
}

VipResult estimate_vip(const LayerCurve& curve, const VipConfig& config) {
  if (!(config.alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  const int layers = curve.num_layers();
  if (layers < 2) throw std::invalid_argument("VIP estimation needs L >= 2");

  VipResult result;
  result.mode = config.mode;
  result.alpha = config.alpha;
  result.divergence = curve.divergence;
  result.thresholds.resize(layers);
  for (int l = 0; l < layers; ++l) {
    const double mean = curve.all.mean[l];
    result.thresholds[l] = mean != 0.0
                               ? config.alpha * curve.all.std[l] / mean
                               : std::numeric_limits<double>::quiet_NaN();
  }
  result.satisfied.resize(static_cast<std::size_t>(layers - 1));
  for (int l = 0; l < layers - 1; ++l) {
    const double th = result.thresholds[l];
    const double div = curve.divergence[l];
    result.satisfied[l] = !std::isnan(th) && div > 0.0 && div >= th;
  }

  if (config.mode == VipMode::first) {
    for (int l = 0; l < layers - 1; ++l)
      if (result.satisfied[l]) {
        result.l_star = l + 1;
        break;
      }
  } else {
    // Walk back from L-1 while the condition keeps holding.
    int start = layers - 1;
    while (start > 0 && result.satisfied[start - 1]) --start;
    if (start < layers - 1) result.l_star = start + 1;
  }

  for (int l = 0; l < layers; ++l) {
    try {
      result.layer_stats.push_back(two_sample_from_moments(
          curve.vt.mean[l], curve.vt.std[l], curve.vt.n, curve.t.mean[l],
          curve.t.std[l], curve.t.n, l + 1));
    } catch (const StatsError&) {
      TwoSampleStat s;
      s.layer = l + 1;
      s.delta = curve.divergence[l];
      s.se = 0.0;
      s.z = std::numeric_limits<double>::quiet_NaN();
      s.n_vt = curve.vt.n;
      s.n_t = curve.t.n;
      result.layer_stats.push_back(s);
    }
  }
  return result;
}

double default_pre_epsilon(const LayerCurve& curve) {
  const double se = std::sqrt(
      curve.vt.std[0] * curve.vt.std[0] / static_cast<double>(curve.vt.n) +
      curve.t.std[0] * curve.t.std[0] / static_cast<double>(curve.t.n));
  return 2.0 * se;
}

HypothesisReport check_hypothesis(const LayerCurve& curve, int l_star,
                                  const VipConfig& config) {
  const int layers = curve.num_layers();
  if (l_star < 1 || l_star > layers - 1)
    throw std::invalid_argument("l_star must lie in [1, L-1]");
  if (!config.tau || !(*config.tau > 0.0))
    throw std::invalid_argument("hypothesis check needs tau > 0");

  HypothesisReport report;
  report.l_star = l_star;
  report.tau = *config.tau;
  report.pre_epsilon = config.pre_epsilon.value_or(default_pre_epsilon(curve));
  if (report.pre_epsilon < 0.0)
    throw std::invalid_argument("pre_epsilon must be >= 0");

  for (int l = 1; l <= layers; ++l) {
    LayerCheck c;
    c.layer = l;
    c.divergence = curve.divergence[l - 1];
    c.post = l >= l_star;
    c.ok = c.post ? c.divergence > report.tau
                  : std::abs(c.divergence) <= report.pre_epsilon;
    if (!c.ok) {
      report.failures.push_back(
          "layer " + std::to_string(l) + (c.post ? " (post)" : " (pre)") +
          ": divergence " + std::to_string(c.divergence) +
          (c.post ? " <= tau " + std::to_string(report.tau)
                  : " exceeds pre_epsilon " + std::to_string(report.pre_epsilon)));
    }
    report.layers.push_back(c);
  }
  report.holds = report.failures.empty();
  return report;
}

// ---------------------------------------------------------------------------

const std::vector<std::pair<std::string, int>>& known_vips() {
  static const std::vector<std::pair<std::string, int>> table = {
      {"Qwen2.5-VL-7B", 18},        {"InternVL3-8B", 16},
      {"Gemma-3-4B", 20},           {"Gemma-3-12B", 26},
      {"Gemma-3-27B", 35},          {"LLaVA-v1.5-7B", 9},
      {"Eagle2.5-8B", 15},          {"Llama-3.2-11B-Vision", 12},
      {"LLaVA-NeXT-Vicuna-7B", 12}, {"LLaVA-OV-Qwen2-7B", 15},
      {"SmolVLM", 15},
  };
  return table;
}

namespace {

std::string casefold(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

const std::vector<std::pair<std::string, std::string>>& hub_aliases() {
  static const std::vector<std::pair<std::string, std::string>> aliases = {
      {"Qwen/Qwen2.5-VL-7B-Instruct", "Qwen2.5-VL-7B"},
      {"OpenGVLab/InternVL3-8B-hf", "InternVL3-8B"},
      {"google/gemma-3-4b-it", "Gemma-3-4B"},
      {"google/gemma-3-12b-it", "Gemma-3-12B"},
      {"google/gemma-3-27b-it", "Gemma-3-27B"},
      {"llava-hf/llava-1.5-7b-hf", "LLaVA-v1.5-7B"},
      {"nvidia/Eagle2.5-8B", "Eagle2.5-8B"},
      {"meta-llama/Llama-3.2-11B-Vision-Instruct", "Llama-3.2-11B-Vision"},
      {"llava-hf/llava-v1.6-vicuna-7b-hf", "LLaVA-NeXT-Vicuna-7B"},
      {"llava-hf/llava-onevision-qwen2-7b-ov-hf", "LLaVA-OV-Qwen2-7B"},
      {"HuggingFaceTB/SmolVLM-Instruct", "SmolVLM"},
  };
  return aliases;
}

}  // namespace

std::optional<int> lookup_known_vip(std::string_view model_id) {
  // model_id may carry extractor metadata after a ';'.
  const std::string key = casefold(model_id.substr(0, model_id.find(';')));
  std::string canonical = key;
  for (const auto& [alias, name] : hub_aliases())
    if (casefold(alias) == key) canonical = casefold(name);
  for (const auto& [name, layer] : known_vips())
    if (casefold(name) == canonical) return layer;
  return std::nullopt;
}

}  // namespace coe
