#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "restorl/grid.hpp"

namespace restorl {

// Seeded random source. Gaussian draws use Box-Muller on top of the
// engine's uniforms so the sample stream is fully determined by the seed
// and the call sequence, independent of the standard library's
// normal_distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi);

  // Standard normal draw.
  double normal();

  Grid normal_grid(int channels, int height, int width);

  // Engine + spare-cache snapshot; round-trips exactly through restore().
  std::string serialize() const;
  void restore(const std::string& state);

  // Derives an independent stream seed from a master seed (splitmix64 mix).
  static std::uint64_t derive(std::uint64_t master, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace restorl
