#pragma once
// Seeded randomness helpers. Everything here is a pure function of the
// mt19937_64 stream, so seeded runs are bit-reproducible across platforms
// (std::uniform_*_distribution is implementation-defined; these are not).

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace vvv::rng {

using Engine = std::mt19937_64;

// Unbiased integer in [0, n) by rejection sampling.
inline std::uint64_t below(Engine& eng, std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return x % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double unit(Engine& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

// Standard normal via Box-Muller (one value per call; the pair's second
// half is discarded so the stream stays easy to reason about).
inline double gaussian(Engine& eng) {
  double u1 = unit(eng);
  double u2 = unit(eng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(below(eng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// First k elements of a seeded permutation of [0, n): sampling without
// replacement.
inline std::vector<std::size_t> sample_indices(Engine& eng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(below(eng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k < n ? k : n);
  return idx;
}

inline void fill_bytes(Engine& eng, std::uint8_t* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint8_t>(eng() & 0xff);
}

// splitmix64 step; used to derive independent sub-streams from one seed.
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix(base);
  for (std::uint64_t p : path) s = mix(s ^ p);
  return s;
}

// FNV-1a, for folding strings into seed paths.
inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace vvv::rng
