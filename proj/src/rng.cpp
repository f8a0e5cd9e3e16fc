#include "narpath/rng.hpp"

namespace narpath {

std::uint64_t Rng::next() {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::real() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::range(double lo, double hi) { return lo + (hi - lo) * real(); }

int Rng::index(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  Rng r(seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL));
  return r.next();
}

}  // namespace narpath
