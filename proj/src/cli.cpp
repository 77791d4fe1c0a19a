#include "coe/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coe/baselines.hpp"
#include "coe/curves.hpp"
#include "coe/measure.hpp"
#include "coe/partition.hpp"
#include "coe/report.hpp"
#include "coe/stats.hpp"
#include "coe/synth.hpp"
#include "coe/theory.hpp"
#include "coe/trace.hpp"
#include "coe/tvi.hpp"

namespace coe::cli {

namespace {

using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kConfigVersion = 1;

// ---------------------------------------------------------------------------
// Options

struct TraceOptions {
  std::string path;
  std::string metric = "cosine";
  bool normalized = false;
  std::string norm = "casefold";
  double lens_epsilon = kDefaultLensEpsilon;
  int threads = 0;
};

struct VipOptions {
  double alpha = 1.0;
  std::string mode = "persistent";
  double tau = 0.0;
  double pre_epsilon = 0.0;
  std::vector<CLI::Option*> tau_opts;
  std::vector<CLI::Option*> pre_epsilon_opts;
};

struct LStarOptions {
  int l_star = 0;
  bool model_default = false;
  bool estimate = false;
  std::string model;
  std::vector<CLI::Option*> l_star_opts;
};

struct CorrelateOptions {
  std::string score = "tvi";
  std::string method = "t";
  std::size_t permutations = 10000;
  std::uint64_t seed = 0;
};

struct SynthOptions {
  SynthConfig config;
  std::string metric = "cosine";
  double logistic_beta = 0.0;
  double margin = 0.0;
  double alpha = 1.0;
  std::string out;
  CLI::Option* beta_opt = nullptr;
  CLI::Option* margin_opt = nullptr;
};

struct Options {
  TraceOptions trace;
  VipOptions vip;
  LStarOptions lstar;
  CorrelateOptions corr;
  SynthOptions synth;
  std::string plotdata;
  std::string svg;
  std::string model_id;
  bool list = false;
  std::uint64_t theory_seed = 0;
  std::uint64_t theory_samples = 100000;
  std::string config_path;
};

// The same option struct backs several subcommands; any of them may carry it.
bool given(const std::vector<CLI::Option*>& opts) {
  return std::any_of(opts.begin(), opts.end(),
                     [](const CLI::Option* opt) { return opt->count() > 0; });
}

Measure measure_of(const TraceOptions& o) {
  const auto kind = parse_measure(o.metric);
  if (!kind) throw UsageError("unknown metric '" + o.metric + "'");
  if (!(o.lens_epsilon > 0.0)) throw UsageError("--lens-epsilon must be > 0");
  return Measure{*kind, o.normalized, o.lens_epsilon};
}

AnswerNormalization normalization_of(const TraceOptions& o) {
  const auto mode = parse_normalization(o.norm);
  if (!mode) throw UsageError("unknown normalization '" + o.norm + "'");
  return *mode;
}

int threads_of(const TraceOptions& o) {
  return o.threads > 0 ? o.threads : default_thread_count();
}

VipConfig vip_config_of(const VipOptions& o) {
  VipConfig c;
  if (!(o.alpha > 0.0)) throw UsageError("--alpha must be > 0");
  c.alpha = o.alpha;
  const auto mode = parse_vip_mode(o.mode);
  if (!mode) throw UsageError("unknown VIP mode '" + o.mode + "'");
  c.mode = *mode;
  if (given(o.tau_opts)) {
    if (!(o.tau > 0.0)) throw UsageError("--tau must be > 0");
    c.tau = o.tau;
  }
  if (given(o.pre_epsilon_opts)) {
    if (!(o.pre_epsilon >= 0.0)) throw UsageError("--pre-epsilon must be >= 0");
    c.pre_epsilon = o.pre_epsilon;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Trace loading and provenance

TraceReader load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  const auto report = validate_trace(bytes);
  if (!report.ok()) {
    std::string msg = path + " failed validation";
    for (const auto& v : report.violations) msg += "\n  " + v;
    throw DataError(msg);
  }
  return TraceReader::from_bytes(std::move(bytes));
}

json trace_config(const TraceOptions& o) {
  return json{{"trace", o.path},
              {"metric", o.metric},
              {"normalized", o.normalized},
              {"norm", o.norm},
              {"lens-epsilon", o.lens_epsilon}};
}

json vip_config_json(const VipConfig& c) {
  json j{{"alpha", c.alpha}, {"mode", to_string(c.mode)}};
  if (c.tau) j["tau"] = *c.tau;
  if (c.pre_epsilon) j["pre-epsilon"] = *c.pre_epsilon;
  return j;
}

json provenance(std::string_view command, const TraceHeader* header, json config) {
  json p{{"tool", "coe"}, {"version", kToolVersion}, {"command", command}};
  if (header) p["model_id"] = header->model_id;
  p["config"] = std::move(config);
  return p;
}

void emit_csv_provenance(const json& p, std::ostream& out) {
  out << "# tool: coe " << p["version"].get<std::string>() << '\n';
  if (p.contains("model_id"))
    out << "# model_id: " << p["model_id"].get<std::string>() << '\n';
  out << "# config: " << p["config"].dump() << '\n';
}

json number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// ---------------------------------------------------------------------------
// l* resolution

struct ResolvedLStar {
  int l_star = 0;
  std::string source;
};

ResolvedLStar resolve_l_star(const LStarOptions& o, const TraceHeader& header,
                             const std::function<std::optional<int>()>& estimate) {
  const bool explicit_set = given(o.l_star_opts);
  if (explicit_set && (o.l_star < 1 || o.l_star > header.num_layers))
    throw UsageError("--lstar " + std::to_string(o.l_star) + " outside [1, " +
                     std::to_string(header.num_layers) + "]");
  const bool none = !o.estimate && !o.model_default && !explicit_set;

  std::vector<std::string> tried;
  if (o.estimate || none) {
    if (const auto l = estimate()) return {*l, "estimate"};
    tried.push_back("estimate_vip found no layer");
  }
  if (o.model_default) {
    const std::string id = o.model.empty() ? header.model_id : o.model;
    if (const auto l = lookup_known_vip(id)) {
      if (*l > header.num_layers)
        throw DataError("published VIP " + std::to_string(*l) + " of " + id +
                        " exceeds the trace's " + std::to_string(header.num_layers) +
                        " layers");
      return {*l, "model-default"};
    }
    tried.push_back("no published VIP for model '" + id + "'");
  }
  if (explicit_set) return {o.l_star, "explicit"};

  std::string msg = "cannot resolve l*:";
  for (const auto& t : tried) msg += " " + t + ";";
  msg += " pass --lstar N";
  throw DataError(msg);
}

std::function<std::optional<int>()> estimator(const DistanceTable& table,
                                              const Partition& partition,
                                              const VipConfig& vip) {
  return [&table, &partition, vip] {
    return estimate_vip(compute_curve(table, partition), vip).l_star;
  };
}

json l_star_json(const ResolvedLStar& r) {
  return json{{"l_star", r.l_star}, {"source", r.source}};
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  fn(f);
  if (!f) throw DataError("error writing " + path);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_validate(const Options& o, std::ostream& out) {
  const auto report = validate_trace(std::filesystem::path(o.trace.path));
  if (report.ok()) {
    const auto reader = TraceReader::open(o.trace.path);
    out << "ok: " << reader.size() << " records, " << reader.header().num_layers
        << " layers\n";
    return kOk;
  }
  for (const auto& v : report.violations) out << v << '\n';
  return kDataError;
}

int cmd_info(const Options& o, std::ostream& out) {
  const auto reader = load_trace(o.trace.path);
  const auto& h = reader.header();
  json j;
  j["provenance"] = provenance("info", &h, json{{"trace", o.trace.path}});
  j["header"] = json{{"format_version", h.format_version},
                     {"model_id", h.model_id},
                     {"num_layers", h.num_layers},
                     {"hidden_dim", h.hidden_dim},
                     {"num_heads", h.num_heads},
                     {"sample_count", h.sample_count},
                     {"has_attention", h.has_attention},
                     {"has_correctness", h.has_correctness},
                     {"has_logitlens", h.has_logitlens},
                     {"logitlens_k", h.logitlens_k},
                     {"element_type", h.element_type}};
  j["shape"] = "L=" + std::to_string(h.num_layers) + " d_z=" +
               std::to_string(h.hidden_dim) + " H=" + std::to_string(h.num_heads) +
               " N=" + std::to_string(h.sample_count);
  if (const auto vip = lookup_known_vip(h.model_id)) j["known_vip"] = *vip;
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_partition(const Options& o, std::ostream& out) {
  const auto reader = load_trace(o.trace.path);
  const auto mode = normalization_of(o.trace);
  const auto p = partition_by_agreement(reader, mode);
  emit_csv_provenance(
      provenance("partition", &reader.header(),
                 json{{"trace", o.trace.path}, {"norm", to_string(mode)}}),
      out);
  std::vector<std::pair<std::uint32_t, Group>> rows;
  for (auto id : p.vt_ids) rows.emplace_back(id, Group::vt);
  for (auto id : p.t_ids) rows.emplace_back(id, Group::t);
  std::sort(rows.begin(), rows.end());
  out << "sample_id,group\n";
  for (const auto& [id, g] : rows) out << id << ',' << to_string(g) << '\n';
  out << "# |D|=" << rows.size() << ", |D_VT|=" << p.vt_ids.size()
      << ", |D_T|=" << p.t_ids.size() << '\n';
  return kOk;
}

int cmd_curve(const Options& o, std::ostream& out) {
  const auto reader = load_trace(o.trace.path);
  const auto measure = measure_of(o.trace);
  const auto vip = vip_config_of(o.vip);
  const auto part = partition_by_agreement(reader, normalization_of(o.trace));
  const auto curve = compute_curve(reader, part, measure, threads_of(o.trace));
  const auto result = estimate_vip(curve, vip);

  json cfg = trace_config(o.trace);
  cfg["vip"] = vip_config_json(vip);
  emit_csv_provenance(provenance("curve", &reader.header(), cfg), out);
  out << "# vip: " << (result.l_star ? std::to_string(*result.l_star) : "none")
      << '\n';
  out << "layer,group,mean,std,n,divergence\n";
  for (int l = 1; l <= curve.num_layers(); ++l)
    for (Group g : {Group::vt, Group::t, Group::all}) {
      const auto m = curve.moments(l, g);
      out << l << ',' << to_string(g) << ',' << format_number(m.mean) << ','
          << format_number(m.std) << ',' << m.n << ','
          << format_number(curve.divergence[l - 1]) << '\n';
    }
  if (!o.plotdata.empty())
    write_file(o.plotdata,
               [&](std::ostream& f) { emit_curve_plotdata(curve, result.l_star, f); });
  if (!o.svg.empty())
    write_file(o.svg, [&](std::ostream& f) {
      emit_curve_svg(curve, result.l_star, f,
                     reader.header().model_id + " (" + o.trace.metric + ")");
    });
  return kOk;
}

int cmd_vip(const Options& o, std::ostream& out) {
  const auto reader = load_trace(o.trace.path);
  const auto measure = measure_of(o.trace);
  const auto vip = vip_config_of(o.vip);
  const auto part = partition_by_agreement(reader, normalization_of(o.trace));
  const auto curve = compute_curve(reader, part, measure, threads_of(o.trace));
  const auto r = estimate_vip(curve, vip);

  json cfg = trace_config(o.trace);
  cfg["vip"] = vip_config_json(vip);
  json j;
  j["provenance"] = provenance("vip", &reader.header(), cfg);
  j["l_star"] = r.l_star ? json(*r.l_star) : json("none");
  j["mode"] = to_string(r.mode);
  j["alpha"] = r.alpha;
  j["n_vt"] = curve.vt.n;
  j["n_t"] = curve.t.n;
  json layers = json::array();
  for (int l = 1; l <= curve.num_layers(); ++l) {
    const auto& s = r.layer_stats[l - 1];
    json row{{"layer", l},
             {"divergence", number(r.divergence[l - 1])},
             {"threshold", number(r.thresholds[l - 1])}};
    row["satisfied"] = l < curve.num_layers() ? json(bool(r.satisfied[l - 1]))
                                              : json(nullptr);
    row["se"] = number(s.se);
    row["z"] = number(s.z);
    layers.push_back(std::move(row));
  }
  j["layers"] = std::move(layers);

  if (vip.tau) {
    const int at = r.l_star.value_or(0);
    if (at == 0) {
      j["hypothesis"] = json{{"holds", false}, {"reason", "no VIP to test"}};
    } else {
      const auto h = check_hypothesis(curve, at, vip);
      j["hypothesis"] = json{{"holds", h.holds},
                             {"l_star", h.l_star},
                             {"tau", h.tau},
                             {"pre_epsilon", h.pre_epsilon},
                             {"failures", h.failures}};
    }
  }
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_known_vip(const Options& o, std::ostream& out) {
  if (o.list) {
    out << "model_id,vip\n";
    for (const auto& [name, layer] : known_vips()) out << name << ',' << layer << '\n';
    return kOk;
  }
  if (o.model_id.empty()) throw UsageError("known-vip needs a model id or --list");
  if (const auto l = lookup_known_vip(o.model_id)) {
    out << *l << '\n';
    return kOk;
  }
  out << "unknown\n";
  return kDataError;
}

int cmd_tvi(const Options& o, std::ostream& out) {
  const auto reader = load_trace(o.trace.path);
  const auto measure = measure_of(o.trace);
  const auto vip = vip_config_of(o.vip);
  const auto part = partition_by_agreement(reader, normalization_of(o.trace));
  const auto table = compute_distance_table(reader, measure, threads_of(o.trace));
  const auto ls = resolve_l_star(o.lstar, reader.header(), estimator(table, part, vip));
  const auto batch = tvi_batch(table, &part, ls.l_star);

  json cfg = trace_config(o.trace);
  cfg["vip"] = vip_config_json(vip);
  cfg["l_star"] = l_star_json(ls);
  emit_csv_provenance(provenance("tvi", &reader.header(), cfg), out);
  out << "sample_id,group,tvi_post,tvi_pre\n";
  for (const auto& s : batch.scores)
    out << s.sample_id << ',' << to_string(s.group) << ',' << format_number(s.tvi_post)
        << ',' << (s.tvi_pre ? format_number(*s.tvi_pre) : "") << '\n';
  for (const auto& g : batch.summary)
    out << "# summary group=" << to_string(g.group) << " n=" << g.post.n
        << " post_mean=" << format_number(g.post.mean)
        << " post_std=" << format_number(g.post.std)
        << " pre_mean=" << format_number(g.pre.mean)
        << " pre_std=" << format_number(g.pre.std) << '\n';
  return kOk;
}

// Scores paired with correctness labels, unknown labels dropped.
struct Labelled {
  std::vector<double> score;
  std::vector<double> correct;
};

std::vector<std::optional<double>> correctness_by_row(const RecordSource& trace,
                                                      const DistanceTable& table) {
  std::vector<std::optional<double>> out(table.sample_ids.size());
  SampleRecord scratch;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace.record(i, scratch);
    if (r.correctness == Correctness::unknown) continue;
    out[static_cast<std::size_t>(table.row_of(r.sample_id))] =
        r.correctness == Correctness::correct ? 1.0 : 0.0;
  }
  return out;
}

Labelled pair_up(const std::vector<std::optional<double>>& labels,
                 const std::vector<std::optional<double>>& scores) {
  Labelled l;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] && scores[i]) {
      l.score.push_back(*scores[i]);
      l.correct.push_back(*labels[i]);
    }
  return l;
}

SpearmanOptions spearman_options(const CorrelateOptions& o, int threads) {
  SpearmanOptions s;
  if (o.method == "t" || o.method == "t_approx") {
    s.method = PValueMethod::t_approx;
  } else if (o.method == "perm" || o.method == "permutation") {
    s.method = PValueMethod::permutation;
  } else {
    throw UsageError("unknown p-value method '" + o.method + "'");
  }
  if (s.method == PValueMethod::permutation && o.permutations == 0)
    throw UsageError("--perms must be > 0");
  s.permutations = o.permutations;
  s.seed = o.seed;
  s.threads = threads;
  return s;
}

// Per-row score of one kind; nullopt rows are excluded from the correlation.
std::vector<std::optional<double>> score_rows(const std::string& score,
                                              const RecordSource& trace,
                                              const DistanceTable& table,
                                              int l_star) {
  std::vector<std::optional<double>> out(table.sample_ids.size());
  const auto rows = static_cast<std::size_t>(table.distances.rows());
  if (score == "tvi" || score == "tvi_pre") {
    for (std::size_t i = 0; i < rows; ++i) {
      const auto row = table.distances.row(static_cast<Eigen::Index>(i));
      out[i] = score == "tvi" ? std::optional<double>(tvi_post(row, l_star))
                              : tvi_pre(row, l_star);
    }
  } else if (score == "outdiv") {
    for (std::size_t i = 0; i < rows; ++i)
      out[i] = table.distances(static_cast<Eigen::Index>(i), table.num_layers() - 1);
  } else if (score == "attention") {
    if (!trace.header().has_attention)
      throw DataError("trace has no attention blocks");
    SampleRecord scratch;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const auto& r = trace.record(i, scratch);
      out[static_cast<std::size_t>(table.row_of(r.sample_id))] = visual_attention(r);
    }
  } else {
    throw UsageError("unknown score '" + score + "'");
  }
  return out;
}

bool score_needs_l_star(const std::string& score) {
  return score == "tvi" || score == "tvi_pre";
}

int cmd_correlate(const Options& o, std::ostream& out) {
  const auto& score = o.corr.score;
  if (score != "tvi" && score != "tvi_pre" && score != "outdiv" && score != "attention")
    throw UsageError("unknown score '" + score + "'");
  const auto reader = load_trace(o.trace.path);
  if (!reader.header().has_correctness)
    throw DataError("trace carries no correctness labels");
  const auto measure = measure_of(o.trace);
  const auto vip = vip_config_of(o.vip);
  const int threads = threads_of(o.trace);
  const auto sopts = spearman_options(o.corr, threads);
  const auto table = compute_distance_table(reader, measure, threads);

  json cfg = trace_config(o.trace);
  std::optional<ResolvedLStar> ls;
  if (score_needs_l_star(score)) {
    const auto part = partition_by_agreement(reader, normalization_of(o.trace));
    ls = resolve_l_star(o.lstar, reader.header(), estimator(table, part, vip));
    cfg["vip"] = vip_config_json(vip);
    cfg["l_star"] = l_star_json(*ls);
  }
  cfg["score"] = score;
  cfg["method"] = to_string(sopts.method);
  if (sopts.method == PValueMethod::permutation) {
    cfg["perms"] = sopts.permutations;
    cfg["seed"] = sopts.seed;
  }

  const auto labelled = pair_up(correctness_by_row(reader, table),
                                score_rows(score, reader, table, ls ? ls->l_star : 0));
  const auto rep = spearman(labelled.score, labelled.correct, sopts);

  json j;
  j["provenance"] = provenance("correlate", &reader.header(), cfg);
  j["score"] = score;
  j["metric"] = score == "attention" ? "-" : o.trace.metric;
  if (ls) j["l_star"] = ls->l_star;
  j["rho"] = number(rep.rho);
  j["p_value"] = number(rep.p_value);
  j["n"] = rep.n;
  j["method"] = to_string(rep.method);
  j["seed"] = rep.seed ? json(*rep.seed) : json(nullptr);
  j["permutations"] = rep.permutations;
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  const auto full = load_trace(o.trace.path).load_all();
  const auto& header = full.header();
  if (!header.has_correctness) throw DataError("trace carries no correctness labels");
  const auto vip = vip_config_of(o.vip);
  const int threads = threads_of(o.trace);
  const auto sopts = spearman_options(o.corr, threads);
  const auto part = partition_by_agreement(full, normalization_of(o.trace));

  std::vector<std::string> metrics{"cosine", "l2", "sqhalf"};
  if (header.has_logitlens) {
    metrics.push_back("kl");
    metrics.push_back("js");
  }

  json cfg{{"trace", o.trace.path},
           {"normalized", o.trace.normalized},
           {"norm", o.trace.norm},
           {"metrics", metrics},
           {"vip", vip_config_json(vip)},
           {"method", to_string(sopts.method)}};
  if (sopts.method == PValueMethod::permutation) {
    cfg["perms"] = sopts.permutations;
    cfg["seed"] = sopts.seed;
  }
  emit_csv_provenance(provenance("compare", &header, cfg), out);
  out << "score,metric,rho,p_value,n,note\n";

  const auto emit = [&](const std::string& score, const std::string& metric,
                        const RecordSource& src, const DistanceTable& table,
                        std::optional<ResolvedLStar> ls) {
    std::string note = ls ? "l*=" + std::to_string(ls->l_star) + " (" + ls->source + ")" : "";
    try {
      const auto labelled = pair_up(correctness_by_row(src, table),
                                    score_rows(score, src, table, ls ? ls->l_star : 0));
      const auto rep = spearman(labelled.score, labelled.correct, sopts);
      out << score << ',' << metric << ',' << format_number(rep.rho) << ','
          << format_number(rep.p_value) << ',' << rep.n << ',' << csv_field(note) << '\n';
    } catch (const std::exception& e) {
      if (!note.empty()) note += "; ";
      out << score << ',' << metric << ",,,," << csv_field(note + e.what()) << '\n';
    }
  };

  bool attention_done = false;
  for (const auto& name : metrics) {
    TraceOptions t = o.trace;
    t.metric = name;
    const auto table = compute_distance_table(full, measure_of(t), threads);
    std::optional<ResolvedLStar> ls;
    std::string ls_error;
    try {
      ls = resolve_l_star(o.lstar, header, estimator(table, part, vip));
    } catch (const std::exception& e) {
      ls_error = e.what();
    }
    if (ls) {
      emit("tvi", name, full, table, ls);
    } else {
      out << "tvi," << name << ",,,," << csv_field(ls_error) << '\n';
    }
    emit("outdiv", name, full, table, std::nullopt);
    if (!attention_done && header.has_attention) {
      emit("attention", "-", full, table, std::nullopt);
      attention_done = true;
    }
  }
  return kOk;
}

json synth_config_json(const SynthConfig& c) {
  json j{{"config_version", SynthConfig::kSchemaVersion},
         {"num-layers", c.num_layers},
         {"hidden-dim", c.hidden_dim},
         {"num-heads", c.num_heads},
         {"n-vt", c.n_vt},
         {"n-t", c.n_t},
         {"l-star", c.l_star_planted},
         {"pre-gap", c.pre_gap},
         {"post-gap", c.post_gap},
         {"noise-sigma", c.noise_sigma},
         {"base-distance", c.base_distance},
         {"metric", to_string(c.metric)},
         {"logitlens-k", c.logitlens_k},
         {"vocab-size", c.vocab_size},
         {"seed", c.seed},
         {"model-id", c.model_id}};
  j["logistic-beta"] = c.logistic_beta ? json(*c.logistic_beta) : json(nullptr);
  return j;
}

int cmd_synth(const Options& o, std::ostream& out) {
  SynthConfig c = o.synth.config;
  const auto metric = parse_metric(o.synth.metric);
  if (!metric) throw UsageError("unknown metric '" + o.synth.metric + "'");
  c.metric = *metric;
  if (o.synth.beta_opt->count()) c.logistic_beta = o.synth.logistic_beta;
  json margin = nullptr;
  if (o.synth.margin_opt->count()) {
    c.post_gap = planted_gap_for_margin(c, o.synth.margin, o.synth.alpha);
    margin = json{{"margin", o.synth.margin}, {"alpha", o.synth.alpha}};
  }
  validate(c);
  const auto trace = generate(c, threads_of(o.trace));
  std::size_t bytes = 0;
  write_file(o.synth.out, [&](std::ostream& f) {
    bytes = write_trace(trace.trace_header, trace.records, f);
  });

  json cfg = synth_config_json(c);
  if (!margin.is_null()) cfg["margin"] = margin;
  json j;
  j["provenance"] = provenance("synth", &trace.trace_header, cfg);
  j["out"] = o.synth.out;
  j["bytes"] = bytes;
  j["records"] = trace.records.size();
  j["planted_l_star"] = c.l_star_planted;
  j["post_gap"] = c.post_gap;
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_theory(const Options& o, std::ostream& out) {
  if (o.theory_samples < 2) throw UsageError("--samples must be >= 2");
  const int threads = threads_of(o.trace);
  constexpr std::size_t kPairs = 1000;
  constexpr Eigen::Index kDim = 64;
  constexpr double kResidualBound = 1e-9;

  bool all_pass = true;
  json checks = json::array();
  const double worst = max_nll_residual(kPairs, kDim, o.theory_seed);
  const bool nll_ok = worst < kResidualBound;
  all_pass = all_pass && nll_ok;
  checks.push_back(json{{"check", "nll-identity"},
                        {"pairs", kPairs},
                        {"dim", kDim},
                        {"max_abs_residual", worst},
                        {"bound", kResidualBound},
                        {"pass", nll_ok}});

  for (const auto& [name, spec] : decomposition_suite(o.theory_seed, o.theory_samples)) {
    const auto r = theorem1_decomposition_check(spec, threads);
    all_pass = all_pass && r.pass;
    checks.push_back(json{{"check", "decomposition/" + name},
                          {"lhs_mc", r.lhs_mc},
                          {"rhs_analytic", r.rhs_analytic},
                          {"mc_stderr", r.mc_stderr},
                          {"kl_vt", r.kl_vt},
                          {"kl_t", r.kl_t},
                          {"entropy_gap", r.entropy_gap},
                          {"pass", r.pass}});
  }
  json j;
  j["provenance"] = provenance(
      "theory-check", nullptr,
      json{{"seed", o.theory_seed}, {"samples", o.theory_samples}});
  j["checks"] = std::move(checks);
  j["pass"] = all_pass;
  out << j.dump(2) << '\n';
  return all_pass ? kOk : kTheoryFailure;
}

// ---------------------------------------------------------------------------
// Argument plumbing

void add_trace_options(CLI::App* sub, TraceOptions& t, bool metric = true) {
  sub->add_option("trace", t.path, "COET trace file")->required();
  if (metric) {
    sub->add_option("--metric", t.metric, "cosine|l2|sqhalf|kl|js")
        ->capture_default_str();
    sub->add_flag("--normalized", t.normalized,
                  "dimension-normalized distances (l2/sqrt(d), sqhalf/d)");
    sub->add_option("--lens-epsilon", t.lens_epsilon,
                    "smoothing mass for tokens missing from a top-K list")
        ->capture_default_str();
  }
  sub->add_option("--norm,--norm-partition", t.norm,
                  "answer normalization: exact|casefold|alnum")
      ->capture_default_str();
}

void add_threads(CLI::App* sub, TraceOptions& t) {
  sub->add_option("--threads", t.threads,
                  "worker threads (default: COE_THREADS or hardware)");
}

void add_vip_options(CLI::App* sub, VipOptions& v) {
  sub->add_option("--alpha", v.alpha, "threshold coefficient")->capture_default_str();
  sub->add_option("--mode", v.mode, "first|persistent")->capture_default_str();
  v.tau_opts.push_back(sub->add_option("--tau", v.tau, "post-VIP divergence floor"));
  v.pre_epsilon_opts.push_back(sub->add_option(
      "--pre-epsilon", v.pre_epsilon, "pre-VIP tolerance (default: 2 SE at layer 1)"));
}

void add_l_star_options(CLI::App* sub, LStarOptions& l) {
  l.l_star_opts.push_back(sub->add_option("--lstar", l.l_star, "explicit l*"));
  sub->add_flag("--model-default", l.model_default, "use the published VIP of the model");
  sub->add_flag("--estimate", l.estimate, "estimate l* from the trace");
  sub->add_option("--model", l.model, "model id for --model-default (default: header)");
}

// Turns the --config JSON object into "--key=value" arguments placed ahead of
// the command-line ones; options keep their last value, so flags win.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (key == "config_version") {
      if (!value.is_number_integer() || value.get<int>() != kConfigVersion)
        throw UsageError("unsupported config_version in " + path);
      continue;
    }
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      args.push_back(flag + "=" + (value.get<bool>() ? "true" : "false"));
    } else if (value.is_string()) {
      args.push_back(flag + "=" + value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back(flag + "=" + value.dump());
    } else {
      throw UsageError("config key '" + key + "' must be a scalar");
    }
  }
  return args;
}

std::vector<std::string> expand_config(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  // Keep the subcommand first so its options are known to the parser.
  auto extra = config_arguments(path);
  const auto sub = std::find_if(args.begin(), args.end(),
                                [](const std::string& a) { return a.rfind("-", 0) != 0; });
  if (sub == args.end()) return args;
  args.insert(sub + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Chain-of-embedding diagnostics for vision-language traces", "coe"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));
  app.add_option("--config", o.config_path,
                 "JSON file of long option names to values; flags override it");

  auto* validate_cmd = app.add_subcommand("validate", "check a trace against its invariants");
  validate_cmd->add_option("trace", o.trace.path, "COET trace file")->required();

  auto* info = app.add_subcommand("info", "print the trace header");
  info->add_option("trace", o.trace.path, "COET trace file")->required();

  auto* partition = app.add_subcommand("partition", "split samples into D_VT and D_T");
  add_trace_options(partition, o.trace, false);

  auto* curve = app.add_subcommand("curve", "layer-wise distance curves per group");
  add_trace_options(curve, o.trace);
  add_threads(curve, o.trace);
  add_vip_options(curve, o.vip);
  curve->add_option("--plotdata", o.plotdata, "write long-format plot data CSV");
  curve->add_option("--svg", o.svg, "write an SVG chart with the l* marker");

  auto* vip = app.add_subcommand("vip", "estimate the visual integration point");
  add_trace_options(vip, o.trace);
  add_threads(vip, o.trace);
  add_vip_options(vip, o.vip);

  auto* known = app.add_subcommand("known-vip", "published VIP of a known model");
  known->add_option("model_id", o.model_id, "model name or hub repository id");
  known->add_flag("--list", o.list, "print the whole registry");

  auto* tvi = app.add_subcommand("tvi", "per-sample total visual integration");
  add_trace_options(tvi, o.trace);
  add_threads(tvi, o.trace);
  add_vip_options(tvi, o.vip);
  add_l_star_options(tvi, o.lstar);

  auto* correlate = app.add_subcommand("correlate", "Spearman correlation with correctness");
  add_trace_options(correlate, o.trace);
  add_threads(correlate, o.trace);
  add_vip_options(correlate, o.vip);
  add_l_star_options(correlate, o.lstar);
  correlate->add_option("--score", o.corr.score, "tvi|tvi_pre|attention|outdiv")
      ->capture_default_str();
  correlate->add_option("--method", o.corr.method, "t|perm")->capture_default_str();
  correlate->add_option("--perms", o.corr.permutations, "permutation count")
      ->capture_default_str();
  correlate->add_option("--seed", o.corr.seed, "permutation seed")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "all scores x metrics correlation grid");
  add_trace_options(compare, o.trace, false);
  compare->add_flag("--normalized", o.trace.normalized, "dimension-normalized distances");
  add_threads(compare, o.trace);
  add_vip_options(compare, o.vip);
  add_l_star_options(compare, o.lstar);
  compare->add_option("--method", o.corr.method, "t|perm")->capture_default_str();
  compare->add_option("--perms", o.corr.permutations, "permutation count")
      ->capture_default_str();
  compare->add_option("--seed", o.corr.seed, "permutation seed")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate a synthetic trace with a planted VIP");
  auto& sc = o.synth.config;
  synth->add_option("--out", o.synth.out, "output trace path")->required();
  synth->add_option("--num-layers", sc.num_layers)->capture_default_str();
  synth->add_option("--hidden-dim", sc.hidden_dim)->capture_default_str();
  synth->add_option("--num-heads", sc.num_heads, "0 disables attention")
      ->capture_default_str();
  synth->add_option("--n-vt", sc.n_vt)->capture_default_str();
  synth->add_option("--n-t", sc.n_t)->capture_default_str();
  synth->add_option("--l-star", sc.l_star_planted, "planted VIP")->capture_default_str();
  synth->add_option("--pre-gap", sc.pre_gap)->capture_default_str();
  synth->add_option("--post-gap", sc.post_gap)->capture_default_str();
  synth->add_option("--noise-sigma", sc.noise_sigma)->capture_default_str();
  synth->add_option("--base-distance", sc.base_distance)->capture_default_str();
  synth->add_option("--metric", o.synth.metric, "cosine|l2|sqhalf")->capture_default_str();
  o.synth.beta_opt = synth->add_option("--logistic-beta", o.synth.logistic_beta,
                                       "logistic correctness link slope");
  synth->add_option("--logitlens-k", sc.logitlens_k, "0 disables logit-lens blocks")
      ->capture_default_str();
  synth->add_option("--vocab-size", sc.vocab_size)->capture_default_str();
  synth->add_option("--seed", sc.seed)->capture_default_str();
  synth->add_option("--model-id", sc.model_id)->capture_default_str();
  o.synth.margin_opt = synth->add_option(
      "--margin", o.synth.margin, "set post-gap to this multiple of the VIP threshold");
  synth->add_option("--alpha", o.synth.alpha, "threshold coefficient for --margin")
      ->capture_default_str();
  add_threads(synth, o.trace);

  auto* theory = app.add_subcommand("theory-check", "numerical checks of the distance theory");
  theory->add_option("--seed", o.theory_seed)->capture_default_str();
  theory->add_option("--samples", o.theory_samples, "Monte Carlo samples per group")
      ->capture_default_str();
  add_threads(theory, o.trace);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*validate_cmd) return cmd_validate(o, out);
    if (*info) return cmd_info(o, out);
    if (*partition) return cmd_partition(o, out);
    if (*curve) return cmd_curve(o, out);
    if (*vip) return cmd_vip(o, out);
    if (*known) return cmd_known_vip(o, out);
    if (*tvi) return cmd_tvi(o, out);
    if (*correlate) return cmd_correlate(o, out);
    if (*compare) return cmd_compare(o, out);
    if (*synth) return cmd_synth(o, out);
    if (*theory) return cmd_theory(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}

}  // namespace coe::cli
