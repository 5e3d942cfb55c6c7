#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace specdiff {

/// Seeded random source. Every stochastic routine takes one of these by
/// reference; there is no global generator. The distributions are computed
/// here from raw engine output so sequences are identical across standard
/// library implementations and the full state round-trips through a string.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; no cached second draw.
  double normal();

  /// Uniform integer on the closed range [lo, hi].
  int uniform_int(int lo, int hi);

  std::uint64_t next_u64() { return engine_(); }

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace specdiff
