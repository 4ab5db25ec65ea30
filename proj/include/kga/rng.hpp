#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "kga/errors.hpp"

// Seeded randomness helpers. All distributions are derived from raw engine
// words with no hidden per-distribution state, so serializing the engine
// captures the entire sampling stream (required for exact checkpoint resume).
namespace kga::rng {

using Engine = std::mt19937_64;

// 53-bit uniform in [0, 1).
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; consumes exactly two engine words.
inline double normal(Engine& eng) {
  const double u1 = 1.0 - uniform01(eng);  // (0, 1], keeps log() finite
  const double u2 = uniform01(eng);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

// Unbiased uniform integer in [0, n).
inline std::uint64_t uniform_below(Engine& eng, std::uint64_t n) {
  if (n == 0) throw ContractError("uniform_below: n must be positive");
  const std::uint64_t rem = (std::uint64_t{0} - n) % n;  // 2^64 mod n
  if (rem == 0) return eng() % n;
  const std::uint64_t bound = std::uint64_t{0} - rem;    // largest multiple of n
  for (;;) {
    const std::uint64_t v = eng();
    if (v < bound) return v % n;
  }
}

inline bool bernoulli(Engine& eng, double p) { return uniform01(eng) < p; }

// Exact engine state round-trip via the standard textual representation.
inline std::string serialize(const Engine& eng) {
  std::ostringstream os;
  os << eng;
  return os.str();
}

inline Engine deserialize(const std::string& text) {
  std::istringstream is(text);
  Engine eng;
  is >> eng;
  if (!is) throw ParseError("invalid rng state text", 0);
  return eng;
}

}  // namespace kga::rng
