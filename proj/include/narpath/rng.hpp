// Seeded splitmix64 generator. Used everywhere randomness is needed so that
// runs are reproducible independent of the standard library implementation.
#pragma once

#include <cstdint>

namespace narpath {

struct Rng {
  std::uint64_t state;

  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next();

  // uniform in [0, 1)
  double real();

  // uniform in [lo, hi)
  double range(double lo, double hi);

  // uniform in [0, n), n > 0
  int index(int n);
};

// combines a base seed with stream identifiers (scenario index, repeat, ...)
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace narpath
