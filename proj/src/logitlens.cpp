#include "coe/logitlens.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "coe/metrics.hpp"

namespace coe {

std::string_view to_string(DivergenceKind kind) {
  return kind == DivergenceKind::kl ? "kl" : "js";
}

std::optional<DivergenceKind> parse_divergence(std::string_view name) {
  if (name == "kl") return DivergenceKind::kl;
  if (name == "js") return DivergenceKind::js;
  return std::nullopt;
}

double TopKDistribution::tail_mass() const {
  double mass = 0.0;
  for (const auto& e : entries) mass += e.prob;
  return std::clamp(1.0 - mass, 0.0, 1.0);
}

namespace {

struct Aligned {
  std::vector<double> p;
  std::vector<double> q;
};

// Both distributions laid out over the sorted union of token ids.
Aligned align(TopKDistribution a, TopKDistribution b, double epsilon) {
  std::vector<TokenProb> sa(a.entries.begin(), a.entries.end());
  std::vector<TokenProb> sb(b.entries.begin(), b.entries.end());
  const auto by_id = [](const TokenProb& x, const TokenProb& y) {
    return x.token_id < y.token_id;
  };
  std::sort(sa.begin(), sa.end(), by_id);
  std::sort(sb.begin(), sb.end(), by_id);

  Aligned out;
  std::size_t i = 0, j = 0;
  while (i < sa.size() || j < sb.size()) {
    if (j == sb.size() || (i < sa.size() && sa[i].token_id < sb[j].token_id)) {
      out.p.push_back(sa[i++].prob);
      out.q.push_back(epsilon);
    } else if (i == sa.size() || sb[j].token_id < sa[i].token_id) {
      out.p.push_back(epsilon);
      out.q.push_back(sb[j++].prob);
    } else {
      out.p.push_back(sa[i++].prob);
      out.q.push_back(sb[j++].prob);
    }
  }
  for (auto* v : {&out.p, &out.q}) {
    double total = 0.0;
    for (double x : *v) total += x;
    if (!(total > 0.0)) throw MetricError("distribution has no mass");
    for (double& x : *v) x /= total;
  }
  return out;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) sum += p[i] * std::log(p[i] / q[i]);
  return std::max(sum, 0.0);
}

}  // namespace

double divergence(DivergenceKind kind, TopKDistribution p, TopKDistribution q,
                  double epsilon) {
  if (!(epsilon > 0.0)) throw MetricError("epsilon must be positive");
  if (p.entries.empty() && q.entries.empty())
    throw MetricError("empty distributions");
  const Aligned a = align(p, q, epsilon);
  if (kind == DivergenceKind::kl) return kl(a.p, a.q);

  std::vector<double> mid(a.p.size());
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (a.p[i] + a.q[i]);
  return 0.5 * kl(a.p, mid) + 0.5 * kl(a.q, mid);
}

}  // namespace coe
