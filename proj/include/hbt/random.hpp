#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <string_view>

namespace hbt {

using Rng = std::mt19937_64;

/// Named sub-stream families. A stream is keyed by (seed, family, index) so a
/// channel's randomness never depends on which other channels were simulated.
enum class Stream : std::uint64_t {
  Source = 1,
  Modes = 2,
  Jitter = 3,
  Offset = 4,
  Efficiency = 5,
  Dark = 6,
  Crosstalk = 7,
  Trace = 8,
  Test = 99,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream family, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(family))) + index);
}

inline Rng make_rng(std::uint64_t seed, Stream family, std::uint64_t index) {
  return Rng(derive_seed(seed, family, index));
}

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Circular complex Gaussian with E|z|^2 = 1.
inline std::complex<double> complex_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.7071067811865476);
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

} // namespace hbt
