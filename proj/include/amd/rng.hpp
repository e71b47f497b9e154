#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace amd {

/// Seeded splitmix64 generator. All randomness in the project goes through
/// this type so that runs are bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Child generator for a named purpose; independent of how many values the
  /// parent has already produced.
  static Rng derive(std::uint64_t seed, std::string_view stream) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : stream) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    Rng mix(seed ^ h);
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace amd
