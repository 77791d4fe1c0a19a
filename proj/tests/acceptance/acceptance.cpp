// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every oracle below is computed independently of the library path
// it checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "coe/baselines.hpp"
#include "coe/curves.hpp"
#include "coe/measure.hpp"
#include "coe/metrics.hpp"
#include "coe/partition.hpp"
#include "coe/random.hpp"
#include "coe/stats.hpp"
#include "coe/synth.hpp"
#include "coe/theory.hpp"
#include "coe/trace.hpp"
#include "coe/tvi.hpp"
#include "fixtures.hpp"

using namespace coe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

void trace_round_trip() {
  SynthConfig c;
  c.num_layers = 32;
  c.hidden_dim = 128;
  c.num_heads = 8;
  c.n_vt = c.n_t = 32;
  c.seed = 1;
  c.logistic_beta = 8.0;
  c.logitlens_k = 8;
  const auto f = generate(c);

  const auto t0 = Clock::now();
  const auto first = encode_trace(f.trace_header, f.records);
  const auto back = TraceReader::from_bytes(first).load_all();
  const auto second = encode_trace(back.trace_header, back.records);
  const double secs = seconds_since(t0);

  const bool same = first == second && back.trace_header == f.trace_header &&
                    back.records.size() == f.records.size() &&
                    std::equal(back.records.begin(), back.records.end(), f.records.begin());
  const auto& h = back.trace_header;
  const bool shape = h.num_layers == 32 && h.hidden_dim == 128 && h.num_heads == 8 &&
                     h.sample_count == 64;
  report(1, same && shape && secs < 1.0, "trace write/read/write is byte-identical",
         fmt("%zu bytes, L=%d d_z=%d H=%d N=%llu, %.3f s", first.size(), h.num_layers,
             h.hidden_dim, h.num_heads, static_cast<unsigned long long>(h.sample_count),
             secs));
}

// ---------------------------------------------------------------------------

void metric_identities() {
  double worst = 0.0;
  for (std::uint32_t i = 0; i < 10000; ++i) {
    CounterRng rng(2, i);
    const int d = 2 + static_cast<int>(rng.below(127));
    Eigen::VectorXd a(d), b(d);
    for (int k = 0; k < d; ++k) a[k] = rng.normal();
    for (int k = 0; k < d; ++k) b[k] = rng.normal();

    for (auto m : {MetricKind::cosine, MetricKind::l2, MetricKind::squared_l2_half})
      worst = std::max(worst, std::abs(distance(m, a, a)));

    // Gram-Schmidt by hand for an orthogonal unit pair.
    const Eigen::VectorXd u = a / a.norm();
    Eigen::VectorXd v = b - b.dot(u) * u;
    v /= v.norm();
    worst = std::max(worst, std::abs(distance(MetricKind::cosine, u, v) - 1.0));
    worst = std::max(worst, std::abs(distance(MetricKind::cosine, u, Eigen::VectorXd(-u)) - 2.0));

    const double l2 = distance(MetricKind::l2, a, b);
    const double sq = distance(MetricKind::squared_l2_half, a, b);
    worst = std::max(worst, std::abs(l2 * l2 - 2.0 * sq));
  }
  report(2, worst <= 1e-9, "metric identities over 10^4 seeded pairs",
         fmt("max deviation %.3g, bound 1e-9", worst));
}

// ---------------------------------------------------------------------------

void nll_identity() {
  const double r = max_nll_residual(1000, 64, 3);
  report(3, r < 1e-9, "squared distance equals shifted Gaussian NLL",
         fmt("max residual %.3g over 1000 pairs, d_z=64, bound 1e-9", r));
}

// ---------------------------------------------------------------------------

SynthConfig vip_config(std::uint64_t seed) {
  SynthConfig c;
  c.num_layers = 32;
  c.num_heads = 0;
  c.n_vt = c.n_t = 200;
  c.l_star_planted = 18;
  c.metric = MetricKind::l2;
  c.base_distance = 1.0;
  c.noise_sigma = 0.05;
  c.seed = seed;
  c.post_gap = planted_gap_for_margin(c, 5.0);
  return c;
}

std::optional<int> vip_of(const TraceFile& f, VipMode mode) {
  Measure m;
  m.kind = MeasureKind::l2;
  const auto curve = compute_curve(f, partition_by_agreement(f), m);
  VipConfig vc;
  vc.mode = mode;
  return estimate_vip(curve, vc).l_star;
}

void vip_recovery() {
  const auto t0 = Clock::now();
  int hit_first = 0, hit_persistent = 0, null_none = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto planted = generate(vip_config(100 + s));
    hit_first += vip_of(planted, VipMode::first) == 18;
    hit_persistent += vip_of(planted, VipMode::persistent) == 18;

    auto nc = vip_config(200 + s);
    nc.post_gap = 0.0;
    const auto null = generate(nc);
    null_none += !vip_of(null, VipMode::persistent) && !vip_of(null, VipMode::first);
  }
  const double secs = seconds_since(t0);
  const double gap = vip_config(0).post_gap;
  report(4, hit_first == 20 && hit_persistent == 20 && null_none >= 19 && secs < 10.0,
         "planted VIP at layer 18 of 32 is recovered",
         fmt("l2, gap %.4f = 5x threshold, n=200+200: first %d/20, persistent %d/20, "
             "null none %d/20, %.2f s",
             gap, hit_first, hit_persistent, null_none, secs));
}

// ---------------------------------------------------------------------------

void decomposition() {
  const auto t0 = Clock::now();
  bool all = true, unit_rhs = false;
  std::string detail;
  for (const auto& p : decomposition_suite(5, 100000)) {
    const auto r = theorem1_decomposition_check(p.spec);
    // Recheck the pass flag from the raw numbers.
    const bool ok = std::abs(r.lhs_mc - r.rhs_analytic) <= 3.0 * r.mc_stderr;
    all = all && ok && r.pass == ok;
    if (p.name == "unit-shift") unit_rhs = std::abs(r.rhs_analytic - 0.5) <= 1e-12;
    detail += fmt("%s %.4f vs %.4f (se %.4f); ", p.name.c_str(), r.lhs_mc,
                  r.rhs_analytic, r.mc_stderr);
  }
  const double secs = seconds_since(t0);
  detail += fmt("%.2f s", secs);
  report(5, all && unit_rhs && secs < 30.0,
         "distance gap equals KL gap plus entropy gap, 5 configs at 10^5 samples", detail);
}

// ---------------------------------------------------------------------------

std::vector<long double> brute_ranks(const std::vector<double>& v) {
  std::vector<long double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long double below = 0, equal = 0;
    for (double w : v) {
      below += w < v[i];
      equal += w == v[i];
    }
    r[i] = below + (equal + 1) / 2;
  }
  return r;
}

long double pearson(const std::vector<long double>& a, const std::vector<long double>& b) {
  const long double n = a.size();
  long double ma = std::accumulate(a.begin(), a.end(), 0.0L) / n;
  long double mb = std::accumulate(b.begin(), b.end(), 0.0L) / n;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double exact_perm_p(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = brute_ranks(x), ry = brute_ranks(y);
  const double rho = std::abs(static_cast<double>(pearson(rx, ry)));
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t hit = 0, total = 0;
  std::vector<long double> p(ry.size());
  do {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = ry[idx[i]];
    hit += std::abs(static_cast<double>(pearson(rx, p))) >= rho - 1e-12;
    ++total;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return static_cast<double>(hit) / static_cast<double>(total);
}

void spearman_oracle() {
  double worst = 0.0;
  int perm_checked = 0, perm_inside = 0, vectors = 0;
  for (std::uint32_t i = 0; vectors < 200; ++i) {
    CounterRng rng(6, i);
    const std::size_t n = 3 + rng.below(28);
    const std::uint64_t levels = 2 + rng.below(6);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = static_cast<double>(rng.below(levels));
    for (auto& v : y) v = static_cast<double>(rng.below(levels));
    if (brute_ranks(x) == std::vector<long double>(n, (n + 1) / 2.0L) ||
        brute_ranks(y) == std::vector<long double>(n, (n + 1) / 2.0L))
      continue;  // constant side
    ++vectors;
    const double ref = static_cast<double>(pearson(brute_ranks(x), brute_ranks(y)));
    worst = std::max(worst, std::abs(spearman(x, y).rho - ref));

    if (n <= 8) {
      SpearmanOptions o;
      o.method = PValueMethod::permutation;
      o.permutations = 4000;
      o.seed = i;
      const double p = spearman(x, y, o).p_value;
      const double exact = exact_perm_p(x, y);
      const double B = static_cast<double>(o.permutations);
      // 99.9% normal-approximation interval plus the +1 correction.
      const double half = 3.29 * std::sqrt(exact * (1.0 - exact) / B) + 1.0 / B;
      ++perm_checked;
      perm_inside += std::abs(p - exact) <= half;
    }
  }

  std::vector<double> up(30), sq(30);
  std::iota(up.begin(), up.end(), 1.0);
  for (std::size_t k = 0; k < 30; ++k) sq[k] = std::exp(0.1 * static_cast<double>(k));
  const auto mono_t = spearman(up, sq);
  SpearmanOptions o;
  o.method = PValueMethod::permutation;
  o.permutations = 2000;
  const auto mono_p = spearman(up, sq, o);
  // For n=30 no shuffle reaches |rho|=1, so the estimate is 1/(B+1).
  const bool mono = mono_t.rho == 1.0 && mono_t.p_value == 0.0 && mono_p.rho == 1.0 &&
                    mono_p.p_value == 1.0 / 2001.0;

  report(6, worst <= 1e-12 && perm_inside == perm_checked && perm_checked > 0 && mono,
         "Spearman matches the brute-force average-rank oracle",
         fmt("200 tied vectors, max |drho| %.3g; permutation p inside CI %d/%d; "
             "monotone rho %.17g, p_t %g, p_perm %.6g",
             worst, perm_inside, perm_checked, mono_t.rho, mono_t.p_value,
             mono_p.p_value));
}

// ---------------------------------------------------------------------------

void null_normality() {
  const int reps = 2000;
  const std::size_t n = 500;
  std::vector<double> z(reps);
  for (int r = 0; r < reps; ++r) {
    CounterRng a(7, static_cast<std::uint32_t>(r), 0), b(7, static_cast<std::uint32_t>(r), 1);
    // Skewed null distances: half squared norm of a Gaussian in 8 dimensions.
    const auto draw = [](CounterRng& rng) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) {
        const double g = rng.normal();
        s += g * g;
      }
      return 0.5 * s;
    };
    std::vector<double> vt(n), t(n);
    for (auto& v : vt) v = draw(a);
    for (auto& v : t) v = draw(b);
    z[r] = two_sample_layer_stat(vt, t).z;
  }
  const auto s = summarize(z);
  report(7, std::abs(s.mean) < 0.1 && s.std >= 0.9 && s.std <= 1.1,
         "null two-sample z is approximately standard normal",
         fmt("N=M=500, %d replicates: mean %.4f, std %.4f", reps, s.mean, s.std));
}

// ---------------------------------------------------------------------------

SynthConfig link_config(std::uint64_t seed) {
  SynthConfig c;
  c.num_heads = 0;
  c.n_vt = c.n_t = 200;
  c.metric = MetricKind::l2;
  c.base_distance = 4.0;
  c.noise_sigma = 1.2;
  c.post_gap = 0.5;
  c.logistic_beta = 8.0;
  c.seed = seed;
  return c;
}

void correctness_link() {
  Measure m;
  m.kind = MeasureKind::l2;
  // Correlation pattern on one trace per seed; every seed must show it.
  int pattern = 0;
  double min_post = 1.0, max_pre = -1.0, min_gap = 2.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto f = generate(link_config(300 + s));
    const auto batch = tvi_batch(f, nullptr, 18, m);
    std::vector<double> post, pre, correct;
    for (std::size_t i = 0; i < f.records.size(); ++i) {
      post.push_back(batch.scores[i].tvi_post);
      pre.push_back(*batch.scores[i].tvi_pre);
      correct.push_back(f.records[i].correctness == Correctness::correct ? 1.0 : 0.0);
    }
    const double rp = spearman(post, correct).rho;
    const double rq = spearman(pre, correct).rho;
    pattern += rp > 0.5 && rp - rq >= 0.2;
    min_post = std::min(min_post, rp);
    max_pre = std::max(max_pre, rq);
    min_gap = std::min(min_gap, rp - rq);
  }

  int ordered = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    double means[2];
    for (int k = 0; k < 2; ++k) {
      auto c = link_config(400 + s);
      c.post_gap = k == 0 ? 0.1 : 0.5;
      const auto f = generate(c);
      means[k] = tvi_batch(f, nullptr, 18, m).summary.back().post.mean;
    }
    ordered += means[0] < means[1];
  }
  report(8, pattern == 5 && ordered == 20,
         "TVI after the VIP tracks correctness, TVI before it does not",
         fmt("beta=8, n=200+200, 5 seeds: min rho_post %.3f, max rho_pre %.3f, "
             "min gap %.3f; low < high separation %d/20",
             min_post, max_pre, min_gap, ordered));
}

// ---------------------------------------------------------------------------

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void definitional_coincidence() {
  std::vector<TraceFile> fixtures;
  for (auto metric : {MetricKind::cosine, MetricKind::l2, MetricKind::squared_l2_half}) {
    SynthConfig c;
    c.metric = metric;
    c.base_distance = 0.3;
    c.logitlens_k = 6;
    c.seed = 9;
    fixtures.push_back(generate(c));
  }
  fixtures.push_back(coe::testing::random_trace(7, 16, 40, 11, 2, 4));
  fixtures.push_back(coe::testing::random_trace(3, 5, 12, 12));

  std::size_t checked = 0, equal = 0;
  for (const auto& f : fixtures) {
    const int L = f.trace_header.num_layers;
    for (auto kind : {MeasureKind::cosine, MeasureKind::l2, MeasureKind::sqhalf,
                      MeasureKind::kl, MeasureKind::js}) {
      for (bool normalized : {false, true}) {
        Measure m;
        m.kind = kind;
        m.normalized = normalized;
        if (m.uses_logitlens() && (!f.trace_header.has_logitlens || normalized)) continue;
        const auto table = compute_distance_table(f, m);
        for (const auto& r : f.records) {
          const double od = output_divergence(r, m);
          ++checked;
          equal += bit_equal(od, tvi_post(r, L, m)) &&
                   bit_equal(od, tvi_post(table.distances.row(table.row_of(r.sample_id)), L));
        }
      }
    }
  }
  report(9, checked > 0 && equal == checked,
         "output divergence equals TVI with l* = L bit for bit",
         fmt("%zu/%zu sample-measure pairs over %zu fixture traces", equal, checked,
             fixtures.size()));
}

// ---------------------------------------------------------------------------

void registry() {
  const std::vector<std::pair<const char*, int>> published{
      {"Qwen2.5-VL-7B", 18}, {"InternVL3-8B", 16}, {"Gemma-3-4B", 20},
      {"Gemma-3-12B", 26},   {"Gemma-3-27B", 35},  {"LLaVA-v1.5-7B", 9}};
  int exact = 0;
  std::string detail;
  for (const auto& [name, layer] : published) {
    const auto got = lookup_known_vip(name);
    exact += got == layer;
    detail += fmt("%s %s; ", name, got ? std::to_string(*got).c_str() : "none");
  }
  detail +=
      "real-model tables and curves are not reproduced at desk scale, "
      "criteria 4 to 8 are the synthetic stand-ins";
  report(10, exact == static_cast<int>(published.size()) && !lookup_known_vip("NotAModel"),
         "known-VIP registry holds the published layers", detail);
}

}  // namespace

int main() {
  trace_round_trip();
  metric_identities();
  nll_identity();
  vip_recovery();
  decomposition();
  spearman_oracle();
  null_normality();
  correctness_link();
  definitional_coincidence();
  registry();
  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
