#pragma once

#include <array>
#include <cstdint>

namespace coe {

/// Philox4x32-10 block function. Stateless: the same (counter, key) always
/// maps to the same 128-bit output.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based stream keyed by (seed, a, b, c). Two streams with different
/// keys never share state, so samples can be drawn in any order or thread
/// and still reproduce bit-exactly.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t a, std::uint32_t b = 0,
             std::uint32_t c = 0);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1), 53 bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, bound) without modulo bias.
  std::uint64_t below(std::uint64_t bound);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint64_t, 2> buffer_{};
  int available_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace coe
