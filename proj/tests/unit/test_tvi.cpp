#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "coe/baselines.hpp"
#include "coe/synth.hpp"
#include "coe/tvi.hpp"
#include "fixtures.hpp"

using namespace coe;

TEST_CASE("worked TVI arithmetic") {
  Eigen::RowVectorXd d(4);
  d << 0.1, 0.2, 0.3, 0.5;
  CHECK(tvi_post(d, 3) == doctest::Approx(0.4));
  CHECK(*tvi_pre(d, 3) == doctest::Approx(0.15));
  CHECK_FALSE(tvi_pre(d, 1));
  CHECK(tvi_post(d, 4) == 0.5);
  CHECK_THROWS_AS(tvi_post(d, 0), std::invalid_argument);
  CHECK_THROWS_AS(tvi_post(d, 5), std::invalid_argument);
}

TEST_CASE("constant distances") {
  const Eigen::RowVectorXd d = Eigen::RowVectorXd::Constant(7, 0.375);
  for (int l = 1; l <= 7; ++l) {
    CHECK(tvi_post(d, l) == 0.375);
    if (l > 1) CHECK(*tvi_pre(d, l) == 0.375);
  }
}

TEST_CASE("record TVI matches a naive loop") {
  const auto f = coe::testing::random_trace(9, 6, 8, 21);
  for (auto kind : {MeasureKind::cosine, MeasureKind::l2, MeasureKind::sqhalf})
    for (bool norm : {false, true}) {
      const Measure m{kind, norm};
      for (const auto& r : f.records)
        for (int ls = 1; ls <= 9; ++ls) {
          double post = 0, pre = 0;
          for (int l = ls; l <= 9; ++l) post += layer_distance(r, l, m);
          for (int l = 1; l < ls; ++l) pre += layer_distance(r, l, m);
          CHECK(std::abs(tvi_post(r, ls, m) - post / (10 - ls)) <= 1e-12);
          if (ls > 1) CHECK(std::abs(*tvi_pre(r, ls, m) - pre / (ls - 1)) <= 1e-12);
        }
    }
}

TEST_CASE("raising post-VIP distances raises TVI") {
  Eigen::RowVectorXd d(6);
  d << 0.2, 0.1, 0.4, 0.3, 0.3, 0.9;
  const double before = tvi_post(d, 3);
  d.tail(4).array() += 1e-6;
  CHECK(tvi_post(d, 3) > before);
}

TEST_CASE("batch ordering, groups and summaries") {
  auto f = coe::testing::random_trace(5, 4, 9, 13);
  std::reverse(f.records.begin(), f.records.end());
  const auto part = partition_by_agreement(f);
  const Measure m{MeasureKind::l2};
  const auto batch = tvi_batch(f, &part, 3, m, 2);
  REQUIRE(batch.scores.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(batch.scores[i].sample_id == i);
    CHECK(batch.scores[i].group == part.group_of(static_cast<std::uint32_t>(i)));
    CHECK(batch.scores[i].l_star_used == 3);
  }
  REQUIRE(batch.summary.size() == 3);
  CHECK(batch.summary[0].group == Group::vt);
  CHECK(batch.summary[2].group == Group::all);
  CHECK(batch.summary[2].post.n == 9);

  const auto no_part = tvi_batch(f, nullptr, 3, m, 1);
  REQUIRE(no_part.summary.size() == 1);
  CHECK(no_part.summary[0].post.mean == batch.summary[2].post.mean);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(no_part.scores[i].tvi_post == batch.scores[i].tvi_post);
}

TEST_CASE("identical samples have zero spread") {
  auto f = coe::testing::random_trace(4, 3, 5, 2);
  for (std::size_t i = 1; i < f.records.size(); ++i) {
    f.records[i].emb_vis = f.records[0].emb_vis;
    f.records[i].emb_blind = f.records[0].emb_blind;
  }
  const auto batch = tvi_batch(f, nullptr, 2, Measure{});
  CHECK(batch.summary[0].post.std == 0.0);
}

TEST_CASE("weaker separation yields lower TVI") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig lo, hi;
    lo.seed = hi.seed = seed;
    lo.post_gap = 0.1;
    hi.post_gap = 0.6;
    const auto a = tvi_batch(generate(lo), nullptr, lo.l_star_planted, Measure{});
    const auto b = tvi_batch(generate(hi), nullptr, hi.l_star_planted, Measure{});
    CHECK(a.summary[0].post.mean < b.summary[0].post.mean);
  }
}

TEST_CASE("planted group means match the generator") {
  SynthConfig cfg;
  cfg.n_vt = 80;
  cfg.n_t = 80;
  cfg.noise_sigma = 0.05;
  cfg.seed = 12;
  const auto f = generate(cfg);
  const auto part = partition_by_agreement(f);
  const auto batch = tvi_batch(f, &part, cfg.l_star_planted, Measure{});
  const auto e = expected_curve(cfg);
  const int L = cfg.num_layers, ls = cfg.l_star_planted;
  const double exp_vt = e.vt.segment(ls - 1, L - ls + 1).mean();
  const double exp_t = e.t.segment(ls - 1, L - ls + 1).mean();
  const auto& vt = batch.summary[0].post;
  const auto& t = batch.summary[1].post;
  CHECK(std::abs(vt.mean - exp_vt) <= 3 * vt.std / std::sqrt(80.0) + 1e-6);
  CHECK(std::abs(t.mean - exp_t) <= 3 * t.std / std::sqrt(80.0) + 1e-6);
}

TEST_CASE("output divergence equals TVI at the last layer") {
  const auto f = coe::testing::random_trace(6, 5, 10, 17, 2);
  for (auto kind : {MeasureKind::cosine, MeasureKind::l2, MeasureKind::sqhalf})
    for (bool norm : {false, true}) {
      const Measure m{kind, norm};
      for (const auto& r : f.records) CHECK(output_divergence(r, m) == tvi_post(r, 6, m));
    }
}
