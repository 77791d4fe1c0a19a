#pragma once

// Chain-of-embedding trace container ("COET").
//
// Layout, little-endian throughout:
//   "COET" | u16 version | u16 reserved | u32 header_len | header JSON
//   then sample_count records, each prefixed by its u32 byte length.
// A record stores the last generated token's hidden state at every decoder
// layer for both the vision and the blind (text-only) context.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace coe {

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// L x d_z, one row per decoder layer (row 0 is layer 1).
using EmbeddingMatrix = RowMatrix<float>;
/// L x H pre-aggregated attention mass on visual tokens.
using AttentionMatrix = RowMatrix<float>;

inline constexpr std::uint16_t kTraceFormatVersion = 1;
inline constexpr char kElementType[] = "f32le";

enum class Correctness : std::uint8_t {
  incorrect = 0,
  correct = 1,
  unknown = 255,
};

struct TokenProb {
  std::uint32_t token_id = 0;
  float prob = 0.0f;
  friend bool operator==(const TokenProb&, const TokenProb&) = default;
};

/// Top-K logit-lens entries of one layer, sorted by descending probability.
using TopKList = std::vector<TokenProb>;
/// One TopKList per layer.
using LensBlock = std::vector<TopKList>;

struct TraceHeader {
  int format_version = kTraceFormatVersion;
  std::string model_id;
  int num_layers = 0;
  int hidden_dim = 0;
  int num_heads = 0;
  std::uint64_t sample_count = 0;
  bool has_attention = false;
  bool has_correctness = false;
  bool has_logitlens = false;
  int logitlens_k = 0;
  std::string element_type = kElementType;

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct SampleRecord {
  std::uint32_t sample_id = 0;
  std::string pred_vis;
  std::string pred_blind;
  Correctness correctness = Correctness::unknown;
  EmbeddingMatrix emb_vis;
  EmbeddingMatrix emb_blind;
  std::optional<AttentionMatrix> attention;
  std::optional<LensBlock> lens_vis;
  std::optional<LensBlock> lens_blind;
};

/// Field-for-field equality; floats compare by bit pattern.
bool operator==(const SampleRecord& a, const SampleRecord& b);

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Anything that can hand out records by index. Implementations decode into
/// `scratch` when they do not hold the record in memory.
class RecordSource {
 public:
  virtual ~RecordSource() = default;
  virtual const TraceHeader& header() const = 0;
  virtual std::size_t size() const = 0;
  virtual const SampleRecord& record(std::size_t index,
                                     SampleRecord& scratch) const = 0;
};

/// A fully materialized trace.
struct TraceFile final : RecordSource {
  TraceHeader trace_header;
  std::vector<SampleRecord> records;

  TraceFile() = default;
  TraceFile(TraceHeader h, std::vector<SampleRecord> r)
      : trace_header(std::move(h)), records(std::move(r)) {}

  const TraceHeader& header() const override { return trace_header; }
  std::size_t size() const override { return records.size(); }
  const SampleRecord& record(std::size_t index, SampleRecord&) const override {
    return records.at(index);
  }
};

/// Header invariant violations; empty when the header is well formed.
std::vector<std::string> header_violations(const TraceHeader& header);

/// Typed invariant violations of one record against its header: shapes,
/// attention range, logit-lens mass, token-id uniqueness, finiteness.
std::vector<std::string> record_violations(const TraceHeader& header,
                                           const SampleRecord& record);

/// Streaming writer. The header (including sample_count) is emitted up front;
/// finish() checks that exactly sample_count records were appended.
class TraceWriter {
 public:
  TraceWriter(std::ostream& sink, const TraceHeader& header);

  void append(const SampleRecord& record);
  /// Returns the total number of bytes written.
  std::size_t finish();

 private:
  std::ostream& sink_;
  TraceHeader header_;
  std::size_t bytes_ = 0;
  std::uint64_t appended_ = 0;
  bool finished_ = false;
};

std::size_t write_trace(const TraceHeader& header,
                        std::span<const SampleRecord> records,
                        std::ostream& sink);
void write_trace_file(const TraceHeader& header,
                      std::span<const SampleRecord> records,
                      const std::filesystem::path& path);
std::vector<std::uint8_t> encode_trace(const TraceHeader& header,
                                       std::span<const SampleRecord> records);

struct DecodeOptions {
  bool reject_non_finite = true;
};

/// Parses the header eagerly and indexes record offsets; records are decoded
/// on demand and independently, so concurrent record() calls are safe.
class TraceReader final : public RecordSource {
 public:
  static TraceReader from_bytes(std::vector<std::uint8_t> bytes,
                                DecodeOptions options = {});
  static TraceReader from_stream(std::istream& source,
                                 DecodeOptions options = {});
  static TraceReader open(const std::filesystem::path& path,
                          DecodeOptions options = {});

  const TraceHeader& header() const override { return header_; }
  std::size_t size() const override { return offsets_.size(); }
  const SampleRecord& record(std::size_t index,
                             SampleRecord& scratch) const override;

  SampleRecord decode(std::size_t index) const;
  TraceFile load_all() const;

 private:
  TraceReader() = default;

  std::shared_ptr<const std::vector<std::uint8_t>> bytes_;
  TraceHeader header_;
  std::vector<std::size_t> offsets_;
  DecodeOptions options_;
};

inline TraceFile read_trace(std::istream& source) {
  return TraceReader::from_stream(source).load_all();
}

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_trace(std::vector<std::uint8_t> bytes);
ValidationReport validate_trace(std::istream& source);
ValidationReport validate_trace(const std::filesystem::path& path);

}  // namespace coe
