#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace segrobust {

// Deterministic random source. std::mt19937_64 has a fully specified
// algorithm and all distributions are implemented here by hand, so a given
// seed yields the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; consumes two engine draws per call.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Uniform integer in [0, n), n >= 1. Rejection sampling, no modulo bias.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Derive a seed for an independent child stream.
  uint64_t derive() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace segrobust
