#pragma once

#include <cstdint>
#include <random>

namespace topogen {

/// All stochastic components draw from a seeded mt19937_64 so that every
/// run is reproducible from the recorded seeds alone.
using Rng = std::mt19937_64;

/// One splitmix64 scrambling round.  Used to derive well-separated child
/// seeds from a master seed plus a stream index.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derive the seed for child stream `stream` of master seed `seed`.
/// Distinct (seed, stream) pairs map to distinct, decorrelated seeds, so
/// parallel or reordered consumers stay bit-reproducible.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (0x9e3779b97f4a7c15ull + splitmix64(stream)));
}

}  // namespace topogen
