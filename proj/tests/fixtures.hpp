#pragma once
// Small hand-built traces shared by the unit and acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "coe/random.hpp"
#include "coe/trace.hpp"

namespace coe::testing {

inline TraceHeader small_header(int layers, int dim, std::uint64_t count,
                                int heads = 0, int lens_k = 0) {
  TraceHeader h;
  h.model_id = "fixture";
  h.num_layers = layers;
  h.hidden_dim = dim;
  h.num_heads = heads;
  h.sample_count = count;
  h.has_attention = heads > 0;
  h.has_correctness = true;
  h.has_logitlens = lens_k > 0;
  h.logitlens_k = lens_k;
  return h;
}

/// Random Gaussian embeddings, uniform attention and normalized top-K lens
/// lists drawn from one seeded stream per sample.
inline SampleRecord random_record(const TraceHeader& h, std::uint32_t id,
                                  std::uint64_t seed, std::string pv = "yes",
                                  std::string pb = "no") {
  CounterRng rng(seed, id, 0, 0x46495854u);
  SampleRecord r;
  r.sample_id = id;
  r.pred_vis = std::move(pv);
  r.pred_blind = std::move(pb);
  r.correctness = (id % 2) ? Correctness::correct : Correctness::incorrect;
  r.emb_vis.resize(h.num_layers, h.hidden_dim);
  r.emb_blind.resize(h.num_layers, h.hidden_dim);
  for (Eigen::Index i = 0; i < r.emb_vis.size(); ++i)
    r.emb_vis.data()[i] = static_cast<float>(rng.normal());
  for (Eigen::Index i = 0; i < r.emb_blind.size(); ++i)
    r.emb_blind.data()[i] = static_cast<float>(rng.normal());
  if (h.has_attention) {
    r.attention = AttentionMatrix(h.num_layers, h.num_heads);
    for (Eigen::Index i = 0; i < r.attention->size(); ++i)
      r.attention->data()[i] = static_cast<float>(rng.uniform());
  }
  if (h.has_logitlens) {
    const auto make = [&] {
      LensBlock block(h.num_layers);
      for (auto& list : block) {
        float left = 0.9f;
        for (int k = 0; k < h.logitlens_k; ++k) {
          const float p = left * 0.5f;
          left -= p;
          list.push_back({static_cast<std::uint32_t>(k * 3 + rng.below(3)), p});
        }
      }
      return block;
    };
    r.lens_vis = make();
    r.lens_blind = make();
  }
  return r;
}

inline TraceFile random_trace(int layers, int dim, std::uint32_t count,
                              std::uint64_t seed, int heads = 0, int lens_k = 0) {
  TraceFile f;
  f.trace_header = small_header(layers, dim, count, heads, lens_k);
  for (std::uint32_t i = 0; i < count; ++i)
    f.records.push_back(random_record(f.trace_header, i, seed,
                                      "yes", i % 3 == 0 ? "no" : "yes"));
  return f;
}

/// Records whose layer-l distance under squared_l2_half is table[i][l-1]:
/// blind is zero, vis carries sqrt(2 d) on the first coordinate.
inline TraceFile trace_from_sqhalf(const std::vector<std::vector<double>>& table,
                                   const std::vector<bool>& is_vt) {
  TraceFile f;
  const int layers = static_cast<int>(table.front().size());
  f.trace_header = small_header(layers, 2, table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    SampleRecord r;
    r.sample_id = static_cast<std::uint32_t>(i);
    r.pred_vis = "yes";
    r.pred_blind = is_vt[i] ? "no" : "yes";
    r.correctness = Correctness::correct;
    r.emb_vis = EmbeddingMatrix::Zero(layers, 2);
    r.emb_blind = EmbeddingMatrix::Zero(layers, 2);
    for (int l = 0; l < layers; ++l)
      r.emb_vis(l, 0) = static_cast<float>(std::sqrt(2.0 * table[i][l]));
    f.records.push_back(std::move(r));
  }
  return f;
}

}  // namespace coe::testing
