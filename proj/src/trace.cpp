#include "coe/trace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace coe {

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'O', 'E', 'T'};
constexpr std::size_t kPreambleSize = 12;
constexpr double kLensMassTolerance = 1e-4;

// ---------------------------------------------------------------------------
// Byte-level helpers

class ByteSink {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8)
      u8(static_cast<std::uint8_t>(v >> shift));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::size_t size() const { return out_.size(); }
  const std::vector<std::uint8_t>& data() const { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

struct OutOfBytes {};

class ByteCursor {
 public:
  ByteCursor(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | data_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw OutOfBytes{};
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Header (de)serialization

std::string header_json(const TraceHeader& h) {
  nlohmann::json j = {
      {"format_version", h.format_version},
      {"model_id", h.model_id},
      {"num_layers", h.num_layers},
      {"hidden_dim", h.hidden_dim},
      {"num_heads", h.num_heads},
      {"sample_count", h.sample_count},
      {"has_attention", h.has_attention},
      {"has_correctness", h.has_correctness},
      {"has_logitlens", h.has_logitlens},
      {"logitlens_k", h.logitlens_k},
      {"element_type", h.element_type},
  };
  // nlohmann::json orders object keys, so the dump is deterministic.
  return j.dump();
}

TraceHeader parse_header(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("malformed header: ") + e.what());
  }
  static const std::set<std::string> kKeys = {
      "format_version", "model_id",      "num_layers",    "hidden_dim",
      "num_heads",      "sample_count",  "has_attention", "has_correctness",
      "has_logitlens",  "logitlens_k",   "element_type"};
  if (!j.is_object()) throw TraceError("malformed header: not an object");
  for (const auto& [key, value] : j.items())
    if (!kKeys.contains(key))
      throw TraceError("malformed header: unexpected field '" + key + "'");
  TraceHeader h;
  try {
    h.format_version = j.at("format_version").get<int>();
    h.model_id = j.at("model_id").get<std::string>();
    h.num_layers = j.at("num_layers").get<int>();
    h.hidden_dim = j.at("hidden_dim").get<int>();
    h.num_heads = j.at("num_heads").get<int>();
    h.sample_count = j.at("sample_count").get<std::uint64_t>();
    h.has_attention = j.at("has_attention").get<bool>();
    h.has_correctness = j.at("has_correctness").get<bool>();
    h.has_logitlens = j.at("has_logitlens").get<bool>();
    h.logitlens_k = j.at("logitlens_k").get<int>();
    h.element_type = j.at("element_type").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("malformed header: ") + e.what());
  }
  return h;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += "; ";
    out += p;
  }
  return out;
}

std::string context_name(bool vis) { return vis ? "vis" : "blind"; }

std::string shape_of(const auto& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Structural mismatches that make a record unencodable under a header.
std::vector<std::string> shape_problems(const TraceHeader& h,
                                        const SampleRecord& r) {
  std::vector<std::string> out;
  const std::string expected =
      std::to_string(h.num_layers) + "x" + std::to_string(h.hidden_dim);
  if (r.emb_vis.rows() != h.num_layers || r.emb_vis.cols() != h.hidden_dim)
    out.push_back("emb_vis is " + shape_of(r.emb_vis) + ", expected " + expected);
  if (r.emb_blind.rows() != h.num_layers || r.emb_blind.cols() != h.hidden_dim)
    out.push_back("emb_blind is " + shape_of(r.emb_blind) + ", expected " +
                  expected);
  if (h.has_attention != r.attention.has_value())
    out.push_back(h.has_attention ? "attention block missing"
                                  : "unexpected attention block");
  else if (r.attention && (r.attention->rows() != h.num_layers ||
                           r.attention->cols() != h.num_heads))
    out.push_back("attention is " + shape_of(*r.attention) + ", expected " +
                  std::to_string(h.num_layers) + "x" +
                  std::to_string(h.num_heads));
  for (bool vis : {true, false}) {
    const auto& lens = vis ? r.lens_vis : r.lens_blind;
    const std::string name = "logit-lens " + context_name(vis);
    if (h.has_logitlens != lens.has_value()) {
      out.push_back(h.has_logitlens ? name + " block missing"
                                    : "unexpected " + name + " block");
      continue;
    }
    if (!lens) continue;
    if (std::ssize(*lens) != h.num_layers) {
      out.push_back(name + " has " + std::to_string(lens->size()) +
                    " layers, expected " + std::to_string(h.num_layers));
      continue;
    }
    for (std::size_t l = 0; l < lens->size(); ++l)
      if (std::ssize((*lens)[l]) > h.logitlens_k)
        out.push_back(name + " layer " + std::to_string(l + 1) + " has " +
                      std::to_string((*lens)[l].size()) + " entries, K is " +
                      std::to_string(h.logitlens_k));
  }
  if (r.pred_vis.size() > 0xFFFF) out.push_back("pred_vis longer than 65535 bytes");
  if (r.pred_blind.size() > 0xFFFF)
    out.push_back("pred_blind longer than 65535 bytes");
  return out;
}

void encode_record(const TraceHeader& h, const SampleRecord& r, ByteSink& out) {
  const std::size_t len_at = out.size();
  out.u32(0);
  out.u32(r.sample_id);
  out.u8(static_cast<std::uint8_t>(r.correctness));
  out.u16(static_cast<std::uint16_t>(r.pred_vis.size()));
  out.bytes(r.pred_vis);
  out.u16(static_cast<std::uint16_t>(r.pred_blind.size()));
  out.bytes(r.pred_blind);
  for (const auto* m : {&r.emb_vis, &r.emb_blind})
    for (Eigen::Index i = 0; i < m->size(); ++i) out.f32(m->data()[i]);
  if (h.has_attention)
    for (Eigen::Index i = 0; i < r.attention->size(); ++i)
      out.f32(r.attention->data()[i]);
  if (h.has_logitlens) {
    for (const auto* lens : {&*r.lens_vis, &*r.lens_blind})
      for (const auto& layer : *lens) {
        out.u32(static_cast<std::uint32_t>(layer.size()));
        for (const auto& e : layer) {
          out.u32(e.token_id);
          out.f32(e.prob);
        }
      }
  }
  out.patch_u32(len_at, static_cast<std::uint32_t>(out.size() - len_at - 4));
}

void check_encodable(const TraceHeader& h, const SampleRecord& r) {
  const auto problems = shape_problems(h, r);
  if (!problems.empty())
    throw TraceError("record/header inconsistency at sample_id " +
                     std::to_string(r.sample_id) + ": " + join(problems));
}

void check_header(const TraceHeader& h) {
  const auto problems = header_violations(h);
  if (!problems.empty()) throw TraceError("invalid header: " + join(problems));
}

void write_preamble(const TraceHeader& h, ByteSink& out) {
  const std::string json = header_json(h);
  for (auto b : kMagic) out.u8(b);
  out.u16(kTraceFormatVersion);
  out.u16(0);
  out.u32(static_cast<std::uint32_t>(json.size()));
  out.bytes(json);
}

void emit(std::ostream& sink, const ByteSink& bytes) {
  sink.write(reinterpret_cast<const char*>(bytes.data().data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw TraceError("write failed: sink rejected output");
}

bool all_finite(const EmbeddingMatrix& m) { return m.allFinite(); }

SampleRecord decode_record(const TraceHeader& h, const std::uint8_t* data,
                           std::size_t size, std::size_t index,
                           const DecodeOptions& options) {
  const std::string where = "sample " + std::to_string(index);
  SampleRecord r;
  ByteCursor in(data, size);
  try {
    r.sample_id = in.u32();
    const std::uint8_t c = in.u8();
    if (c != 0 && c != 1 && c != 255)
      throw TraceError("malformed record at " + where + ": correctness code " +
                       std::to_string(c));
    r.correctness = static_cast<Correctness>(c);
    r.pred_vis = in.str(in.u16());
    r.pred_blind = in.str(in.u16());
    for (auto* m : {&r.emb_vis, &r.emb_blind}) {
      m->resize(h.num_layers, h.hidden_dim);
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = in.f32();
    }
    if (h.has_attention) {
      r.attention.emplace(h.num_layers, h.num_heads);
      for (Eigen::Index i = 0; i < r.attention->size(); ++i)
        r.attention->data()[i] = in.f32();
    }
    if (h.has_logitlens) {
      for (auto* lens : {&r.lens_vis, &r.lens_blind}) {
        lens->emplace(static_cast<std::size_t>(h.num_layers));
        for (auto& layer : **lens) {
          const std::uint32_t k = in.u32();
          if (k > static_cast<std::uint32_t>(h.logitlens_k))
            throw TraceError("malformed record at " + where +
                             ": logit-lens list of " + std::to_string(k) +
                             " entries exceeds K");
          layer.resize(k);
          for (auto& e : layer) {
            e.token_id = in.u32();
            e.prob = in.f32();
          }
        }
      }
    }
  } catch (const OutOfBytes&) {
    throw TraceError("malformed record at " + where +
                     ": record_len shorter than its contents");
  }
  if (in.remaining() != 0)
    throw TraceError("malformed record at " + where + ": " +
                     std::to_string(in.remaining()) + " unexpected bytes");
  if (options.reject_non_finite &&
      (!all_finite(r.emb_vis) || !all_finite(r.emb_blind)))
    throw TraceError("non-finite embedding at " + where);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

bool operator==(const SampleRecord& a, const SampleRecord& b) {
  const auto same_bits = [](const auto& x, const auto& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (std::bit_cast<std::uint32_t>(x.data()[i]) !=
          std::bit_cast<std::uint32_t>(y.data()[i]))
        return false;
    return true;
  };
  const auto same_lens = [](const std::optional<LensBlock>& x,
                            const std::optional<LensBlock>& y) {
    if (x.has_value() != y.has_value()) return false;
    if (!x) return true;
    if (x->size() != y->size()) return false;
    for (std::size_t l = 0; l < x->size(); ++l) {
      const auto& p = (*x)[l];
      const auto& q = (*y)[l];
      if (p.size() != q.size()) return false;
      for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i].token_id != q[i].token_id ||
            std::bit_cast<std::uint32_t>(p[i].prob) !=
                std::bit_cast<std::uint32_t>(q[i].prob))
          return false;
    }
    return true;
  };
  if (a.attention.has_value() != b.attention.has_value()) return false;
  if (a.attention && !same_bits(*a.attention, *b.attention)) return false;
  return a.sample_id == b.sample_id && a.pred_vis == b.pred_vis &&
         a.pred_blind == b.pred_blind && a.correctness == b.correctness &&
         same_bits(a.emb_vis, b.emb_vis) && same_bits(a.emb_blind, b.emb_blind) &&
         same_lens(a.lens_vis, b.lens_vis) && same_lens(a.lens_blind, b.lens_blind);
}

std::vector<std::string> header_violations(const TraceHeader& h) {
  std::vector<std::string> out;
  if (h.format_version != kTraceFormatVersion)
    out.push_back("format_version " + std::to_string(h.format_version) +
                  " is not " + std::to_string(kTraceFormatVersion));
  if (h.num_layers < 2)
    out.push_back("num_layers must be >= 2, got " + std::to_string(h.num_layers));
  if (h.hidden_dim < 1)
    out.push_back("hidden_dim must be >= 1, got " + std::to_string(h.hidden_dim));
  if (h.num_heads < 0) out.push_back("num_heads must be >= 0");
  if (h.has_attention && h.num_heads < 1)
    out.push_back("has_attention requires num_heads >= 1");
  if (h.logitlens_k < 0) out.push_back("logitlens_k must be >= 0");
  if (h.has_logitlens && h.logitlens_k < 1)
    out.push_back("has_logitlens requires logitlens_k >= 1");
  if (h.element_type != kElementType)
    out.push_back("element_type '" + h.element_type + "' is not f32le");
  return out;
}

std::vector<std::string> record_violations(const TraceHeader& h,
                                           const SampleRecord& r) {
  const std::string at = "sample " + std::to_string(r.sample_id);
  std::vector<std::string> out;
  for (auto& p : shape_problems(h, r)) out.push_back(p + " at " + at);
  if (!out.empty()) return out;

  for (bool vis : {true, false}) {
    const auto& m = vis ? r.emb_vis : r.emb_blind;
    for (Eigen::Index l = 0; l < m.rows(); ++l)
      if (!m.row(l).allFinite()) {
        out.push_back("non-finite embedding at " + at + ", layer " +
                      std::to_string(l + 1) + ", context " + context_name(vis));
        break;
      }
  }
  if (r.attention) {
    for (Eigen::Index l = 0; l < r.attention->rows(); ++l)
      for (Eigen::Index hd = 0; hd < r.attention->cols(); ++hd) {
        const float a = (*r.attention)(l, hd);
        if (!(a >= 0.0f && a <= 1.0f))
          out.push_back("attention out of [0,1] at " + at + ", layer " +
                        std::to_string(l + 1) + ", head " +
                        std::to_string(hd + 1));
      }
  }
  for (bool vis : {true, false}) {
    const auto& lens = vis ? r.lens_vis : r.lens_blind;
    if (!lens) continue;
    for (std::size_t l = 0; l < lens->size(); ++l) {
      const auto& entries = (*lens)[l];
      const std::string where = at + ", layer " + std::to_string(l + 1) +
                                ", context " + context_name(vis);
      double mass = 0.0;
      bool range_ok = true;
      bool sorted = true;
      std::unordered_set<std::uint32_t> seen;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const float p = entries[i].prob;
        if (!(p >= 0.0f && p <= 1.0f)) range_ok = false;
        mass += p;
        if (i > 0 && entries[i - 1].prob < p) sorted = false;
        if (!seen.insert(entries[i].token_id).second)
          out.push_back("duplicate logit-lens token_id " +
                        std::to_string(entries[i].token_id) + " at " + where);
      }
      if (!range_ok)
        out.push_back("logit-lens prob out of [0,1] at " + where);
      if (!(mass <= 1.0 + kLensMassTolerance)) {
        std::ostringstream msg;
        msg << "logit-lens probs sum to " << mass << " > 1 at " << where;
        out.push_back(msg.str());
      }
      if (!sorted)
        out.push_back("logit-lens entries not sorted by descending prob at " +
                      where);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writer

TraceWriter::TraceWriter(std::ostream& sink, const TraceHeader& header)
    : sink_(sink), header_(header) {
  check_header(header_);
  ByteSink out;
  write_preamble(header_, out);
  emit(sink_, out);
  bytes_ += out.size();
}

void TraceWriter::append(const SampleRecord& record) {
  if (finished_) throw TraceError("append after finish");
  check_encodable(header_, record);
  if (appended_ >= header_.sample_count)
    throw TraceError("record/header inconsistency at sample_id " +
                     std::to_string(record.sample_id) +
                     ": more records than sample_count " +
                     std::to_string(header_.sample_count));
  ByteSink out;
  encode_record(header_, record, out);
  emit(sink_, out);
  bytes_ += out.size();
  ++appended_;
}

std::size_t TraceWriter::finish() {
  if (!finished_) {
    finished_ = true;
    if (appended_ != header_.sample_count)
      throw TraceError("record/header inconsistency: sample_count is " +
                       std::to_string(header_.sample_count) + " but " +
                       std::to_string(appended_) + " records were written");
    sink_.flush();
    if (!sink_) throw TraceError("write failed: sink rejected output");
  }
  return bytes_;
}

std::vector<std::uint8_t> encode_trace(const TraceHeader& header,
                                       std::span<const SampleRecord> records) {
  check_header(header);
  if (header.sample_count != records.size())
    throw TraceError("record/header inconsistency: sample_count is " +
                     std::to_string(header.sample_count) + " but " +
                     std::to_string(records.size()) + " records were given");
  ByteSink out;
  write_preamble(header, out);
  for (const auto& r : records) {
    check_encodable(header, r);
    encode_record(header, r, out);
  }
  return out.data();
}

std::size_t write_trace(const TraceHeader& header,
                        std::span<const SampleRecord> records,
                        std::ostream& sink) {
  TraceWriter writer(sink, header);
  for (const auto& r : records) writer.append(r);
  return writer.finish();
}

void write_trace_file(const TraceHeader& header,
                      std::span<const SampleRecord> records,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError("cannot open " + path.string() + " for writing");
  write_trace(header, records, out);
}

// ---------------------------------------------------------------------------
// Reader

TraceReader TraceReader::from_bytes(std::vector<std::uint8_t> bytes,
                                    DecodeOptions options) {
  TraceReader reader;
  reader.options_ = options;
  ByteCursor in(bytes.data(), bytes.size());
  try {
    for (auto b : kMagic)
      if (in.u8() != b) throw TraceError("not a trace file");
  } catch (const OutOfBytes&) {
    throw TraceError("not a trace file");
  }
  std::uint32_t header_len = 0;
  try {
    const std::uint16_t version = in.u16();
    if (version == 0 || version > kTraceFormatVersion)
      throw TraceError("unsupported version " + std::to_string(version));
    in.u16();  // reserved
    header_len = in.u32();
    reader.header_ = parse_header(in.str(header_len));
  } catch (const OutOfBytes&) {
    throw TraceError("truncated header");
  }
  if (reader.header_.format_version > kTraceFormatVersion)
    throw TraceError("unsupported version " +
                     std::to_string(reader.header_.format_version));

  std::size_t offset = kPreambleSize + header_len;
  for (std::uint64_t i = 0; i < reader.header_.sample_count; ++i) {
    if (bytes.size() - offset < 4)
      throw TraceError("truncated at sample " + std::to_string(i));
    ByteCursor len_in(bytes.data() + offset, 4);
    const std::uint32_t len = len_in.u32();
    if (bytes.size() - offset - 4 < len)
      throw TraceError("truncated at sample " + std::to_string(i));
    reader.offsets_.push_back(offset);
    offset += 4 + static_cast<std::size_t>(len);
  }
  if (offset != bytes.size())
    throw TraceError(std::to_string(bytes.size() - offset) +
                     " trailing bytes after the last record");
  reader.bytes_ =
      std::make_shared<const std::vector<std::uint8_t>>(std::move(bytes));
  return reader;
}

TraceReader TraceReader::from_stream(std::istream& source,
                                     DecodeOptions options) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(source)),
                                  std::istreambuf_iterator<char>());
  return from_bytes(std::move(bytes), options);
}

TraceReader TraceReader::open(const std::filesystem::path& path,
                              DecodeOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError("cannot open " + path.string());
  return from_stream(in, options);
}

SampleRecord TraceReader::decode(std::size_t index) const {
  const std::size_t offset = offsets_.at(index);
  const auto& bytes = *bytes_;
  ByteCursor len_in(bytes.data() + offset, 4);
  const std::uint32_t len = len_in.u32();
  return decode_record(header_, bytes.data() + offset + 4, len, index, options_);
}

const SampleRecord& TraceReader::record(std::size_t index,
                                        SampleRecord& scratch) const {
  scratch = decode(index);
  return scratch;
}

TraceFile TraceReader::load_all() const {
  std::vector<SampleRecord> records;
  records.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) records.push_back(decode(i));
  return TraceFile(header_, std::move(records));
}

// ---------------------------------------------------------------------------
// Validation

ValidationReport validate_trace(std::vector<std::uint8_t> bytes) {
  ValidationReport report;
  std::optional<TraceReader> reader;
  try {
    reader = TraceReader::from_bytes(std::move(bytes),
                                     DecodeOptions{.reject_non_finite = false});
  } catch (const TraceError& e) {
    report.violations.emplace_back(e.what());
    return report;
  }
  for (auto& v : header_violations(reader->header()))
    report.violations.push_back("header: " + v);
  if (!report.ok()) return report;

  std::unordered_set<std::uint32_t> ids;
  for (std::size_t i = 0; i < reader->size(); ++i) {
    SampleRecord r;
    try {
      r = reader->decode(i);
    } catch (const TraceError& e) {
      report.violations.emplace_back(e.what());
      continue;
    }
    if (!ids.insert(r.sample_id).second)
      report.violations.push_back("duplicate sample_id " +
                                  std::to_string(r.sample_id));
    for (auto& v : record_violations(reader->header(), r))
      report.violations.push_back(std::move(v));
  }
  return report;
}

ValidationReport validate_trace(std::istream& source) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(source)),
                                  std::istreambuf_iterator<char>());
  return validate_trace(std::move(bytes));
}

ValidationReport validate_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return ValidationReport{{"cannot open " + path.string()}};
  return validate_trace(in);
}

}  // namespace coe
