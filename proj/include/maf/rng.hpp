#pragma once

#include <cstdint>

namespace maf {

// Counter-based pseudo-random generator. Every draw is a pure integer
// function of (key, counter), so identical seeds and call orders produce
// identical streams on any platform. split() derives an independent child
// stream without advancing the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : key_(mix(seed ^ 0x6A09E667F3BCC909ull, 0x9E3779B97F4A7C15ull)) {}

  std::uint64_t next_u64() { return mix(key_, ++counter_); }

  // Uniform in [0, 1), 53 bits of precision.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via the Marsaglia polar method.
  double next_normal();

  // Uniform integer in [0, n); n must be positive.
  std::uint32_t next_below(std::uint32_t n);

  bool bernoulli(double p) { return next_double() < p; }

  // Independent stream keyed by (parent key, stream id).
  Rng split(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix(key_ ^ 0xA0761D6478BD642Full, stream + 0x8EBC6AF09C88C6E3ull);
    child.counter_ = 0;
    return child;
  }

 private:
  // SplitMix64 finalizer over key + ctr * golden ratio.
  static std::uint64_t mix(std::uint64_t key, std::uint64_t ctr) {
    std::uint64_t z = key + ctr * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace maf
