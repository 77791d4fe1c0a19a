#include <doctest.h>

#include <cstring>
#include <limits>
#include <sstream>

#include "coe/trace.hpp"
#include "fixtures.hpp"

using namespace coe;
using coe::testing::random_trace;

namespace {

std::vector<std::uint8_t> encode(const TraceFile& f) {
  return encode_trace(f.trace_header, f.records);
}

bool mentions(const std::vector<std::string>& v, std::string_view needle) {
  for (const auto& s : v)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const TraceError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("round trip with every optional block") {
  const auto f = random_trace(5, 7, 6, 11, 3, 4);
  const auto bytes = encode(f);
  const auto back = TraceReader::from_bytes(bytes).load_all();
  CHECK(back.trace_header == f.trace_header);
  REQUIRE(back.records.size() == f.records.size());
  for (std::size_t i = 0; i < f.records.size(); ++i) CHECK(back.records[i] == f.records[i]);
  CHECK(encode(back) == bytes);
}

TEST_CASE("preamble layout") {
  const auto bytes = encode(random_trace(2, 3, 1, 1));
  REQUIRE(bytes.size() > 12);
  CHECK(std::memcmp(bytes.data(), "COET", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
}

TEST_CASE("stream writer and reader agree") {
  const auto f = random_trace(3, 4, 3, 5);
  std::stringstream ss;
  TraceWriter w(ss, f.trace_header);
  for (const auto& r : f.records) w.append(r);
  const std::size_t n = w.finish();
  CHECK(n == ss.str().size());
  const auto back = read_trace(ss);
  CHECK(back.records.back() == f.records.back());
}

TEST_CASE("writer refuses a wrong record count") {
  const auto f = random_trace(3, 4, 3, 5);
  std::stringstream ss;
  TraceWriter w(ss, f.trace_header);
  w.append(f.records[0]);
  CHECK_THROWS_AS(w.finish(), TraceError);
}

TEST_CASE("decode errors") {
  const auto f = random_trace(3, 4, 3, 5);
  auto bytes = encode(f);

  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    CHECK(error_of([&] { TraceReader::from_bytes(b); }) == "not a trace file");
  }
  SUBCASE("unsupported version") {
    auto b = bytes;
    b[4] = 9;
    CHECK(error_of([&] { TraceReader::from_bytes(b); }) == "unsupported version 9");
  }
  SUBCASE("truncated") {
    auto b = bytes;
    b.resize(b.size() - 5);
    CHECK(error_of([&] { TraceReader::from_bytes(b); }) == "truncated at sample 2");
  }
  SUBCASE("non-finite embedding") {
    auto g = f;
    g.records[1].emb_vis(0, 0) = std::numeric_limits<float>::quiet_NaN();
    const auto b = encode(g);
    const auto reader = TraceReader::from_bytes(b);
    CHECK(error_of([&] { reader.decode(1); }) == "non-finite embedding at sample 1");
    DecodeOptions lax;
    lax.reject_non_finite = false;
    CHECK_NOTHROW(TraceReader::from_bytes(b, lax).decode(1));
  }
  SUBCASE("empty input") {
    CHECK(error_of([&] { TraceReader::from_bytes({}); }) == "not a trace file");
  }
}

TEST_CASE("header invariants") {
  auto h = coe::testing::small_header(4, 8, 2, 2, 3);
  CHECK(header_violations(h).empty());
  h.num_layers = 0;
  CHECK_FALSE(header_violations(h).empty());
  h = coe::testing::small_header(4, 8, 2, 2, 3);
  h.logitlens_k = 0;
  CHECK_FALSE(header_violations(h).empty());
  h = coe::testing::small_header(4, 8, 2);
  h.element_type = "f16";
  CHECK_FALSE(header_violations(h).empty());
}

TEST_CASE("validation reports typed violations") {
  auto f = random_trace(4, 3, 3, 9, 2, 3);
  CHECK(validate_trace(encode(f)).ok());

  SUBCASE("attention out of range") {
    (*f.records[1].attention)(2, 1) = 1.5f;
    const auto rep = validate_trace(encode(f));
    CHECK(mentions(rep.violations, "attention out of [0,1] at sample 1, layer 3, head 2"));
  }
  SUBCASE("logit-lens mass above one") {
    (*f.records[2].lens_blind)[0][0].prob = 0.95f;
    const auto rep = validate_trace(encode(f));
    CHECK(mentions(rep.violations, "logit-lens probs sum to"));
    CHECK(mentions(rep.violations, "layer 1, context blind"));
  }
  SUBCASE("duplicate token ids") {
    auto& list = (*f.records[0].lens_vis)[1];
    list[1].token_id = list[0].token_id;
    CHECK_FALSE(validate_trace(encode(f)).ok());
  }
  SUBCASE("duplicate sample ids") {
    f.records[2].sample_id = f.records[0].sample_id;
    CHECK(mentions(validate_trace(encode(f)).violations, "duplicate"));
  }
  SUBCASE("trailing bytes") {
    auto b = encode(f);
    b.push_back(0);
    CHECK_FALSE(validate_trace(b).ok());
  }
  SUBCASE("bad magic") {
    auto b = encode(f);
    b[1] = 'x';
    const auto rep = validate_trace(b);
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0] == "not a trace file");
  }
}

TEST_CASE("record shape mismatch is rejected on write") {
  auto f = random_trace(3, 4, 2, 1);
  f.records[0].emb_blind.resize(3, 5);
  CHECK_THROWS_AS(encode(f), TraceError);
}

TEST_CASE("files on disk") {
  const auto f = random_trace(3, 4, 4, 2, 2);
  const auto path = std::filesystem::temp_directory_path() / "coe_trace_unit.coet";
  write_trace_file(f.trace_header, f.records, path);
  const auto reader = TraceReader::open(path);
  CHECK(reader.size() == 4);
  SampleRecord scratch;
  CHECK(reader.record(3, scratch) == f.records[3]);
  CHECK(validate_trace(path).ok());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(TraceReader::open(path), TraceError);
}
