#pragma once

#include <cstdint>
#include <random>

namespace mofelab {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent seed streams from one
// user-facing seed without correlated low bits.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic sub-stream seed for a named purpose (tag) of a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix_seed(seed ^ mix_seed(tag));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag) {
  return Rng(derive_seed(seed, tag));
}

}  // namespace mofelab
