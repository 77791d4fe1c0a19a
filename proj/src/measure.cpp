#include "coe/measure.hpp"

namespace coe {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::cosine:
      return "cosine";
    case MetricKind::l2:
      return "l2";
    case MetricKind::squared_l2_half:
      return "sqhalf";
  }
  return "?";
}

std::optional<MetricKind> parse_metric(std::string_view name) {
  if (name == "cosine") return MetricKind::cosine;
  if (name == "l2") return MetricKind::l2;
  if (name == "sqhalf" || name == "squared_l2_half")
    return MetricKind::squared_l2_half;
  return std::nullopt;
}

std::string_view to_string(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::cosine:
      return "cosine";
    case MeasureKind::l2:
      return "l2";
    case MeasureKind::sqhalf:
      return "sqhalf";
    case MeasureKind::kl:
      return "kl";
    case MeasureKind::js:
      return "js";
  }
  return "?";
}

std::optional<MeasureKind> parse_measure(std::string_view name) {
  if (const auto m = parse_metric(name)) {
    switch (*m) {
      case MetricKind::cosine:
        return MeasureKind::cosine;
      case MetricKind::l2:
        return MeasureKind::l2;
      case MetricKind::squared_l2_half:
        return MeasureKind::sqhalf;
    }
  }
  if (name == "kl") return MeasureKind::kl;
  if (name == "js") return MeasureKind::js;
  return std::nullopt;
}

void require_supported(const TraceHeader& header, const Measure& measure) {
  if (measure.uses_logitlens() && !header.has_logitlens)
    throw MetricError("metric " + std::string(to_string(measure.kind)) +
                      " needs logit-lens blocks, which this trace lacks");
}

namespace {

MetricKind latent_metric(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::l2:
      return MetricKind::l2;
    case MeasureKind::sqhalf:
      return MetricKind::squared_l2_half;
    default:
      return MetricKind::cosine;
  }
}

}  // namespace

double layer_distance(const SampleRecord& record, int layer,
                      const Measure& measure) {
  const auto row = static_cast<Eigen::Index>(layer - 1);
  try {
    if (row < 0 || row >= record.emb_vis.rows())
      throw MetricError("layer out of range");
    if (measure.uses_logitlens()) {
      if (!record.lens_vis || !record.lens_blind)
        throw MetricError("logit-lens block missing");
      const auto kind = measure.kind == MeasureKind::kl ? DivergenceKind::kl
                                                        : DivergenceKind::js;
      return divergence(kind, TopKDistribution{(*record.lens_vis)[row]},
                        TopKDistribution{(*record.lens_blind)[row]},
                        measure.lens_epsilon);
    }
    const auto metric = latent_metric(measure.kind);
    const auto vis = record.emb_vis.row(row);
    const auto blind = record.emb_blind.row(row);
    return measure.normalized
               ? normalized_distance(metric, vis, blind, vis.size())
               : distance(metric, vis, blind);
  } catch (const MetricError& e) {
    throw MetricError(std::string(e.what()) + " at sample " +
                      std::to_string(record.sample_id) + ", layer " +
                      std::to_string(layer));
  }
}

Eigen::VectorXd layer_distances(const SampleRecord& record,
                                const Measure& measure) {
  const auto layers = record.emb_vis.rows();
  Eigen::VectorXd out(layers);
  for (Eigen::Index l = 0; l < layers; ++l)
    out[l] = layer_distance(record, static_cast<int>(l + 1), measure);
  return out;
}

}  // namespace coe
