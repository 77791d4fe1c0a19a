#include "coe/tvi.hpp"

#include <stdexcept>
#include <string>

namespace coe {

namespace {

void check_l_star(int l_star, Eigen::Index layers) {
  if (l_star < 1 || l_star > layers)
    throw std::invalid_argument("l_star " + std::to_string(l_star) +
                                " outside [1, " + std::to_string(layers) + "]");
}

double mean_of_layers(const SampleRecord& sample, int first, int last,
                      const Measure& measure) {
  double sum = 0.0;
  for (int l = first; l <= last; ++l) sum += layer_distance(sample, l, measure);
  return sum / static_cast<double>(last - first + 1);
}

double mean_of_columns(const Eigen::Ref<const Eigen::RowVectorXd>& d, int first,
                       int last) {
  double sum = 0.0;
  for (int l = first; l <= last; ++l) sum += d[l - 1];
  return sum / static_cast<double>(last - first + 1);
}

}  // namespace

double tvi_post(const SampleRecord& sample, int l_star, const Measure& measure) {
  const int layers = static_cast<int>(sample.emb_vis.rows());
  check_l_star(l_star, layers);
  return mean_of_layers(sample, l_star, layers, measure);
}

std::optional<double> tvi_pre(const SampleRecord& sample, int l_star,
                              const Measure& measure) {
  check_l_star(l_star, sample.emb_vis.rows());
  if (l_star == 1) return std::nullopt;
  return mean_of_layers(sample, 1, l_star - 1, measure);
}

double tvi_post(const Eigen::Ref<const Eigen::RowVectorXd>& layer_distances,
                int l_star) {
  const int layers = static_cast<int>(layer_distances.size());
  check_l_star(l_star, layers);
  return mean_of_columns(layer_distances, l_star, layers);
}

std::optional<double> tvi_pre(
    const Eigen::Ref<const Eigen::RowVectorXd>& layer_distances, int l_star) {
  check_l_star(l_star, layer_distances.size());
  if (l_star == 1) return std::nullopt;
  return mean_of_columns(layer_distances, 1, l_star - 1);
}

TviBatch tvi_batch(const DistanceTable& table, const Partition* partition,
                   int l_star) {
  check_l_star(l_star, table.num_layers());
  TviBatch batch;
  batch.scores.reserve(table.sample_ids.size());
  for (std::size_t i = 0; i < table.sample_ids.size(); ++i) {
    const Eigen::RowVectorXd row = table.distances.row(static_cast<Eigen::Index>(i));
    TviScore s;
    s.sample_id = table.sample_ids[i];
    s.group = partition ? partition->group_of(s.sample_id) : Group::all;
    s.tvi_post = tvi_post(row, l_star);
    s.tvi_pre = tvi_pre(row, l_star);
    s.l_star_used = l_star;
    s.metric = table.measure.kind;
    s.normalized = table.measure.normalized;
    batch.scores.push_back(s);
  }

  std::vector<Group> groups;
  if (partition) groups = {Group::vt, Group::t};
  groups.push_back(Group::all);
  for (Group g : groups) {
    std::vector<double> post, pre;
    for (const auto& s : batch.scores) {
      if (g != Group::all && s.group != g) continue;
      post.push_back(s.tvi_post);
      if (s.tvi_pre) pre.push_back(*s.tvi_pre);
    }
    batch.summary.push_back(TviGroupSummary{g, summarize(post), summarize(pre)});
  }
  return batch;
}

TviBatch tvi_batch(const RecordSource& trace, const Partition* partition,
                   int l_star, const Measure& measure, int threads) {
  return tvi_batch(compute_distance_table(trace, measure, threads), partition,
                   l_star);
}

}  // namespace coe
