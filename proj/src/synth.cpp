#include "coe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "coe/random.hpp"

namespace coe {

namespace {

// Stream ids keep every quantity on its own counter-based sequence, so
// adding a block (attention, logit lens) never perturbs the embeddings.
enum Stream : std::uint32_t {
  kBlind = 1,
  kDirection = 2,
  kNoise = 3,
  kAttention = 4,
  kCorrect = 5,
  kLensBlind = 6,
  kLensVis = 7,
  kAnswer = 8,
};

constexpr double kInf = std::numeric_limits<double>::infinity();

double upper_bound(MetricKind metric) {
  return metric == MetricKind::cosine ? 2.0 : kInf;
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

bool is_vt(const SynthConfig& c, std::uint64_t index) { return index < c.n_vt; }

double planted_gap(const SynthConfig& c, bool vt, int layer) {
  if (!vt) return 0.0;
  return layer >= c.l_star_planted ? c.post_gap : c.pre_gap;
}

double target_distance(const SynthConfig& c, std::uint32_t sample, int layer,
                       bool vt) {
  const double mean = c.base_distance + planted_gap(c, vt, layer);
  double noise = 0.0;
  if (c.noise_sigma > 0.0) {
    CounterRng rng(c.seed, sample, static_cast<std::uint32_t>(layer), kNoise);
    noise = c.noise_sigma * rng.normal();
  }
  return std::clamp(mean + noise, 0.0, upper_bound(c.metric));
}

// Embedding pair whose metric distance equals `target`.
void place_pair(const SynthConfig& c, std::uint32_t sample, int layer,
                double target, Eigen::Ref<Eigen::RowVectorXf> vis_out,
                Eigen::Ref<Eigen::RowVectorXf> blind_out) {
  const int d = c.hidden_dim;
  CounterRng blind_rng(c.seed, sample, static_cast<std::uint32_t>(layer), kBlind);
  CounterRng dir_rng(c.seed, sample, static_cast<std::uint32_t>(layer), kDirection);
  Eigen::VectorXd blind(d), dir(d);
  for (int i = 0; i < d; ++i) blind[i] = blind_rng.normal();
  for (int i = 0; i < d; ++i) dir[i] = dir_rng.normal();
  // Round the blind state first so the offset is taken from what is stored.
  blind = blind.cast<float>().cast<double>();

  Eigen::VectorXd vis;
  if (c.metric == MetricKind::cosine) {
    // Rotate blind toward an orthogonal direction by theta, 1 - cos(theta) = t.
    const double norm = blind.norm();
    Eigen::VectorXd ortho = dir - (dir.dot(blind) / blind.squaredNorm()) * blind;
    ortho *= norm / ortho.norm();
    const double theta = std::acos(std::clamp(1.0 - target, -1.0, 1.0));
    vis = std::cos(theta) * blind + std::sin(theta) * ortho;
  } else {
    const double radius =
        c.metric == MetricKind::l2 ? target : std::sqrt(2.0 * target);
    vis = blind + radius * dir.normalized();
  }
  blind_out = blind.cast<float>().transpose();
  vis_out = vis.cast<float>().transpose();
}

TopKList top_k(const Eigen::VectorXd& logits, int k) {
  const double peak = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - peak).exp().matrix();
  p /= p.sum();
  std::vector<int> order(static_cast<std::size_t>(p.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p[a] > p[b]; });
  TopKList out;
  for (int i = 0; i < k; ++i)
    out.push_back(TokenProb{static_cast<std::uint32_t>(order[i]),
                            static_cast<float>(p[order[i]])});
  return out;
}

SampleRecord make_record(const SynthConfig& c, std::uint64_t index) {
  const auto sample = static_cast<std::uint32_t>(index);
  const bool vt = is_vt(c, index);
  SampleRecord r;
  r.sample_id = sample;

  CounterRng answer_rng(c.seed, sample, 0, kAnswer);
  const bool yes = answer_rng.below(2) == 0;
  r.pred_vis = yes ? "yes" : "no";
  r.pred_blind = vt ? (yes ? "no" : "yes") : r.pred_vis;

  r.emb_vis.resize(c.num_layers, c.hidden_dim);
  r.emb_blind.resize(c.num_layers, c.hidden_dim);
  std::vector<double> targets(static_cast<std::size_t>(c.num_layers));
  for (int l = 1; l <= c.num_layers; ++l) {
    targets[l - 1] = target_distance(c, sample, l, vt);
    place_pair(c, sample, l, targets[l - 1], r.emb_vis.row(l - 1),
               r.emb_blind.row(l - 1));
  }

  if (c.logistic_beta) {
    double post = 0.0;
    for (int l = c.l_star_planted; l <= c.num_layers; ++l) post += targets[l - 1];
    post /= static_cast<double>(c.num_layers - c.l_star_planted + 1);
    const double p_correct =
        1.0 / (1.0 + std::exp(-*c.logistic_beta * (post - c.base_distance)));
    CounterRng rng(c.seed, sample, 0, kCorrect);
    r.correctness =
        rng.uniform() < p_correct ? Correctness::correct : Correctness::incorrect;
  }

  if (c.num_heads > 0) {
    r.attention.emplace(c.num_layers, c.num_heads);
    for (int l = 0; l < c.num_layers; ++l) {
      CounterRng rng(c.seed, sample, static_cast<std::uint32_t>(l + 1), kAttention);
      for (int h = 0; h < c.num_heads; ++h)
        (*r.attention)(l, h) = static_cast<float>(rng.uniform());
    }
  }

  if (c.logitlens_k > 0) {
    r.lens_vis.emplace();
    r.lens_blind.emplace();
    for (int l = 1; l <= c.num_layers; ++l) {
      CounterRng blind_rng(c.seed, sample, static_cast<std::uint32_t>(l), kLensBlind);
      CounterRng shift_rng(c.seed, sample, static_cast<std::uint32_t>(l), kLensVis);
      Eigen::VectorXd blind(c.vocab_size), vis(c.vocab_size);
      for (int j = 0; j < c.vocab_size; ++j) blind[j] = 2.0 * blind_rng.normal();
      for (int j = 0; j < c.vocab_size; ++j)
        vis[j] = blind[j] + 4.0 * targets[l - 1] * shift_rng.normal();
      r.lens_vis->push_back(top_k(vis, c.logitlens_k));
      r.lens_blind->push_back(top_k(blind, c.logitlens_k));
    }
  }
  return r;
}

}  // namespace

void validate(const SynthConfig& c) {
  const auto fail = [](const std::string& what) { throw SynthError(what); };
  if (c.num_layers < 2) fail("num_layers must be >= 2");
  if (c.hidden_dim < 1) fail("hidden_dim must be >= 1");
  if (c.metric == MetricKind::cosine && c.hidden_dim < 2)
    fail("cosine targets need hidden_dim >= 2");
  if (c.num_heads < 0) fail("num_heads must be >= 0");
  if (c.n_vt < 2 || c.n_t < 2) fail("n_vt and n_t must be >= 2");
  if (c.n_vt + c.n_t > std::numeric_limits<std::uint32_t>::max())
    fail("too many samples");
  if (c.l_star_planted < 1 || c.l_star_planted > c.num_layers - 1)
    fail("l_star_planted must lie in [1, num_layers-1]");
  if (!(c.pre_gap >= 0.0)) fail("pre_gap must be >= 0");
  if (!(c.post_gap >= c.pre_gap)) fail("post_gap must be >= pre_gap");
  if (!(c.noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(c.base_distance >= 0.0)) fail("base_distance must be >= 0");
  const double peak = c.base_distance + std::max(c.pre_gap, c.post_gap);
  if (peak > upper_bound(c.metric))
    fail("unachievable distance target " + std::to_string(peak) + " for metric " +
         std::string(to_string(c.metric)));
  if (c.logitlens_k < 0) fail("logitlens_k must be >= 0");
  if (c.logitlens_k > 0 && c.vocab_size < c.logitlens_k)
    fail("vocab_size must be >= logitlens_k");
}

TraceFile generate(const SynthConfig& config, int threads) {
  validate(config);
  TraceHeader header;
  header.model_id = config.model_id;
  header.num_layers = config.num_layers;
  header.hidden_dim = config.hidden_dim;
  header.num_heads = config.num_heads;
  header.sample_count = config.n_vt + config.n_t;
  header.has_attention = config.num_heads > 0;
  header.has_correctness = config.logistic_beta.has_value();
  header.has_logitlens = config.logitlens_k > 0;
  header.logitlens_k = config.logitlens_k;

  std::vector<SampleRecord> records(header.sample_count);
  parallel_for(
      records.size(), [&](std::size_t i) { records[i] = make_record(config, i); },
      threads);
  return TraceFile(std::move(header), std::move(records));
}

double clamped_normal_mean(double mean, double sigma, double lo, double hi) {
  if (sigma == 0.0) return std::clamp(mean, lo, hi);
  const double a = (lo - mean) / sigma;
  const double b = std::isinf(hi) ? kInf : (hi - mean) / sigma;
  const double cdf_a = normal_cdf(a);
  const double cdf_b = std::isinf(b) ? 1.0 : normal_cdf(b);
  const double pdf_a = normal_pdf(a);
  const double pdf_b = std::isinf(b) ? 0.0 : normal_pdf(b);
  const double upper_tail = std::isinf(hi) ? 0.0 : hi * (1.0 - cdf_b);
  return lo * cdf_a + upper_tail + mean * (cdf_b - cdf_a) + sigma * (pdf_a - pdf_b);
}

ExpectedCurve expected_curve(const SynthConfig& c) {
  validate(c);
  ExpectedCurve e;
  e.vt.resize(c.num_layers);
  e.t.resize(c.num_layers);
  e.all.resize(c.num_layers);
  const double hi = upper_bound(c.metric);
  const double n_vt = static_cast<double>(c.n_vt);
  const double n_t = static_cast<double>(c.n_t);
  for (int l = 1; l <= c.num_layers; ++l) {
    e.vt[l - 1] = clamped_normal_mean(c.base_distance + planted_gap(c, true, l),
                                      c.noise_sigma, 0.0, hi);
    e.t[l - 1] = clamped_normal_mean(c.base_distance, c.noise_sigma, 0.0, hi);
    e.all[l - 1] = (n_vt * e.vt[l - 1] + n_t * e.t[l - 1]) / (n_vt + n_t);
  }
  return e;
}

double planted_gap_for_margin(const SynthConfig& c, double margin, double alpha) {
  if (!(margin > 0.0) || !(alpha > 0.0))
    throw SynthError("margin and alpha must be positive");
  const double p = static_cast<double>(c.n_vt) / static_cast<double>(c.n_vt + c.n_t);
  const double sigma = c.noise_sigma;
  const double base = c.base_distance;
  // Gap minus margin times the threshold, using the two-point mixture moments
  // of the pooled group at a post-VIP layer.
  const auto excess = [&](double g) {
    const double mean = base + p * g;
    const double sd = std::sqrt(sigma * sigma + p * (1.0 - p) * g * g);
    return g * mean - margin * alpha * sd;
  };
  double lo = 0.0;
  double hi = c.metric == MetricKind::cosine ? 2.0 - base : 1.0;
  if (c.metric != MetricKind::cosine)
    while (excess(hi) < 0.0 && hi < 1e12) hi *= 2.0;
  if (!(hi > 0.0) || excess(hi) < 0.0)
    throw SynthError("no post_gap reaches margin " + std::to_string(margin) +
                     " for metric " + std::string(to_string(c.metric)));
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) < 0.0 ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace coe
