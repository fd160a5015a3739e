#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace segstab {

// Deterministic random source with explicit value mappings. mt19937_64 output
// is pinned by the standard; std::uniform_*/normal_distribution are not, so
// the mappings live here to keep seeded streams stable across toolchains.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1) with 53 random bits
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // inclusive bounds; modulo mapping (bias irrelevant at these ranges)
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller
  double normal(double mean = 0.0, double sd = 1.0) {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Independent child stream (splitmix64 of seed material).
  Rng derive(std::uint64_t stream_id) {
    std::uint64_t x = eng_() + 0x9e3779b97f4a7c15ull * (stream_id + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return Rng(x);
  }

private:
  std::mt19937_64 eng_;
};

}  // namespace segstab
