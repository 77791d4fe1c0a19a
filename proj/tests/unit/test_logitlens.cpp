#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "coe/logitlens.hpp"
#include "coe/metrics.hpp"
#include "coe/random.hpp"

using namespace coe;

namespace {

// Dense reference: a map keyed by token id, filled independently of the
// merge-walk in the library.
double dense_reference(DivergenceKind kind, const TopKList& a, const TopKList& b,
                       double eps) {
  std::map<std::uint32_t, std::pair<double, double>> u;
  for (const auto& e : a) u[e.token_id].first = e.prob;
  for (const auto& e : b) u[e.token_id].second = e.prob;
  for (auto& [id, pq] : u) {
    if (std::none_of(a.begin(), a.end(), [&](auto& e) { return e.token_id == id; }))
      pq.first = eps;
    if (std::none_of(b.begin(), b.end(), [&](auto& e) { return e.token_id == id; }))
      pq.second = eps;
  }
  long double sp = 0, sq = 0;
  for (auto& [id, pq] : u) {
    sp += pq.first;
    sq += pq.second;
  }
  long double kl_pq = 0, kl_pm = 0, kl_qm = 0;
  for (auto& [id, pq] : u) {
    const long double p = pq.first / sp, q = pq.second / sq, m = (p + q) / 2;
    kl_pq += p * std::log(p / q);
    kl_pm += p * std::log(p / m);
    kl_qm += q * std::log(q / m);
  }
  return static_cast<double>(kind == DivergenceKind::kl ? kl_pq : (kl_pm + kl_qm) / 2);
}

TopKList random_list(CounterRng& rng, int k, std::uint32_t vocab) {
  std::vector<std::uint32_t> ids(vocab);
  std::iota(ids.begin(), ids.end(), 0u);
  for (std::uint32_t i = vocab - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.below(i + 1)]);
  std::vector<double> w(k);
  double total = 0;
  for (auto& x : w) total += (x = rng.uniform());
  total /= 0.95;
  std::sort(w.begin(), w.end(), std::greater<>());
  TopKList out;
  for (int i = 0; i < k; ++i) out.push_back({ids[i], static_cast<float>(w[i] / total)});
  return out;
}

// Full softmax over `logits`, truncated to its k most probable entries.
TopKList top_k(const std::vector<double>& probs, int k) {
  std::vector<std::uint32_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto x, auto y) { return probs[x] > probs[y]; });
  TopKList out;
  for (int i = 0; i < k; ++i)
    out.push_back({order[i], static_cast<float>(probs[order[i]])});
  return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= s;
  return p;
}

double dense_full(DivergenceKind kind, const std::vector<double>& p,
                  const std::vector<double>& q) {
  double a = 0, b = 0, c = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2;
    a += p[i] * std::log(p[i] / q[i]);
    b += p[i] * std::log(p[i] / m);
    c += q[i] * std::log(q[i] / m);
  }
  return kind == DivergenceKind::kl ? a : (b + c) / 2;
}

}  // namespace

TEST_CASE("worked divergence examples") {
  const TopKList p{{7, 1.0f}}, q{{9, 1.0f}};
  CHECK(divergence(DivergenceKind::js, {p}, {q}, 1e-9) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-3));
  CHECK(divergence(DivergenceKind::kl, {p}, {p}) == 0.0);
  CHECK(divergence(DivergenceKind::js, {p}, {p}) == 0.0);
  CHECK_THROWS_WITH_AS(divergence(DivergenceKind::kl, {}, {}), "empty distributions",
                       MetricError);
  CHECK_THROWS_AS(divergence(DivergenceKind::kl, {p}, {q}, 0.0), MetricError);
  CHECK(TopKDistribution{p}.tail_mass() == 0.0);
  const TopKList half{{1, 0.25f}, {2, 0.25f}};
  CHECK(TopKDistribution{half}.tail_mass() == 0.5);
}

TEST_CASE("random distributions match the dense reference") {
  CounterRng rng(91, 0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto p = random_list(rng, 5, 12);
    const auto q = random_list(rng, 5, 12);
    for (auto k : {DivergenceKind::kl, DivergenceKind::js}) {
      const double got = divergence(k, {p}, {q}, 1e-9);
      CHECK(std::abs(got - dense_reference(k, p, q, 1e-9)) <= 1e-10);
    }
    const double js = divergence(DivergenceKind::js, {p}, {q});
    CHECK(std::abs(js - divergence(DivergenceKind::js, {q}, {p})) <= 1e-12);
    CHECK(js <= std::log(2.0) + 1e-9);
    CHECK(divergence(DivergenceKind::kl, {p}, {q}) >= 0.0);
    CHECK(divergence(DivergenceKind::kl, {p}, {p}) <= 1e-12);
  }
}

// Growing K is not monotone under union-support smoothing: a token that enters
// one list before the other is charged epsilon on the other side. What holds is
// that the untruncated lists reproduce the dense value and beat every
// truncation.
TEST_CASE("full-vocabulary lists reproduce the dense divergence") {
  const std::uint32_t vocab = 48;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(seed, 5);
    std::vector<double> lp(vocab), lq(vocab);
    for (auto& x : lp) x = 2.0 * rng.normal();
    for (std::size_t i = 0; i < vocab; ++i) lq[i] = lp[i] + 0.7 * rng.normal();
    const auto p = softmax(lp), q = softmax(lq);
    for (auto kind : {DivergenceKind::kl, DivergenceKind::js}) {
      const double dense = dense_full(kind, p, q);
      const auto gap_at = [&](int k) {
        const auto a = top_k(p, k), b = top_k(q, k);
        return std::abs(divergence(kind, {a}, {b}) - dense);
      };
      const double full = gap_at(static_cast<int>(vocab));
      CHECK(full <= 1e-6);
      for (int k : {4, 8, 16, 32}) CHECK(full <= gap_at(k));
    }
  }
}
