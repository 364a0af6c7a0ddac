#pragma once

// Seed derivation and the bit generator used for white noise.
//
// Every random stream in the library is keyed by a 64-bit seed derived
// statelessly from a base seed and an index, so trial results do not depend
// on execution order or on the number of worker threads.

#include <cstdint>
#include <limits>
#include <span>

namespace gfc {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// splitmix(base, index): per-trial seed derivation.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return mix64(base + 0x9E3779B97F4A7C15ULL * (index + 1));
}

/// Seed of the white-noise stream on unit cube `cube` for realization seed `seed`.
inline std::uint64_t cube_seed(std::uint64_t seed, std::span<const int> cube) noexcept {
  std::uint64_t s = mix64(seed ^ 0x6A09E667F3BCC909ULL);
  for (int c : cube) {
    s = derive_seed(s, static_cast<std::uint64_t>(static_cast<std::int64_t>(c)));
  }
  return s;
}

/// xoshiro256** seeded through SplitMix64. Models std::uniform_random_bit_generator.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed) noexcept {
    for (auto& w : s_) {
      seed += 0x9E3779B97F4A7C15ULL;
      w = mix64(seed);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) built from the top 53 bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

}  // namespace gfc
