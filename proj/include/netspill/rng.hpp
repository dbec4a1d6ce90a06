#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

// Every random stream is derived from one top-level seed and a stream id:
//   engine(seed, stream) = mt19937_64(splitmix64(seed) ^ splitmix64(stream)).
// Module stream ids: simulate 1, permutation p uses 0x100 + p, super-learner
// folds 3.
namespace netspill::rng {

inline constexpr std::uint64_t kSimulateStream = 1;
inline constexpr std::uint64_t kFoldStream = 3;
inline constexpr std::uint64_t kPermutationStreamBase = 0x100;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Engine = std::mt19937_64;

inline Engine engine(std::uint64_t seed, std::uint64_t stream) {
  return Engine(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Unbiased integer in [0, n).
inline std::size_t uniform_index(Engine& g, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = g();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Engine& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

// Fisher-Yates with uniform_index.
template <typename It>
void shuffle(It first, It last, Engine& g) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(g, i);
    std::swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
  }
}

}  // namespace netspill::rng
