#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace autoview {

// splitmix64; used to derive independent streams from (seed, path...) so that
// any point of a run can be reconstructed without serializing engine state.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_path(uint64_t seed, std::initializer_list<uint64_t> path) {
  uint64_t h = mix64(seed);
  for (uint64_t p : path) h = mix64(h ^ mix64(p));
  return h;
}

/// Deterministic stream split: rng_stream(seed, {step, view, ...}).
inline std::mt19937_64 rng_stream(uint64_t seed, std::initializer_list<uint64_t> path) {
  return std::mt19937_64(hash_path(seed, path));
}

/// Canonical uniform in [0,1): portable across standard libraries, unlike
/// std::uniform_real_distribution.
inline double u01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform in (eps, 1-eps); used for logit-space noise where 0 and 1 blow up.
inline double u_open(std::mt19937_64& rng, double eps = 1e-6) {
  return eps + u01(rng) * (1.0 - 2.0 * eps);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + u01(rng) * (hi - lo);
}

/// Uniform integer in [0, n).
inline int64_t randint(std::mt19937_64& rng, int64_t n) {
  return static_cast<int64_t>(u01(rng) * static_cast<double>(n)) % n;
}

/// Box-Muller without the cached spare, so draws are stateless pairs.
inline double gaussian(std::mt19937_64& rng) {
  double u1 = u_open(rng);
  double u2 = u01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace autoview
