// Named random streams derived from one global seed.
//
// Every consumer (data order, negatives, masking, init, ...) derives its own
// generator from (seed, stream name, coordinates), so enabling one feature
// never shifts another feature's randomness, and any step can be replayed
// without carrying generator state around.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace segalign {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

inline Rng stream_rng(std::uint64_t seed, std::string_view stream,
                      std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(fnv1a(stream)));
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Draws k distinct elements from `pool` (partial Fisher-Yates; pool is permuted).
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T>& pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) throw std::invalid_argument("sample_without_replacement: k exceeds pool size");
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  return std::vector<T>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
}

}  // namespace segalign
