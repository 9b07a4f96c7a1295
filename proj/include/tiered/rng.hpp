#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tiered {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

using Engine = std::mt19937_64;

/// Derives an independent engine for a named purpose. Every random draw in
/// the library goes through one of these, so results depend only on
/// (seed, purpose, index) and never on scheduling.
inline Engine make_stream(std::uint64_t seed, std::string_view purpose,
                          std::uint64_t index = 0) {
  std::uint64_t s = detail::splitmix64(seed);
  s = detail::splitmix64(s ^ detail::fnv1a(purpose));
  s = detail::splitmix64(s ^ (index * 0xd1342543de82ef95ULL + 1));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Engine(seq);
}

}  // namespace tiered
