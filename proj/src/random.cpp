#include "synthgen/random.hpp"

namespace synthgen {

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view key) {
  return splitmix64(splitmix64(base) ^ fnv1a64(key));
}

std::uint64_t Rng::index(std::uint64_t n) {
  // Lemire's multiply-shift; bias is below 2^-64 * n and irrelevant here.
  const auto wide = static_cast<unsigned __int128>(engine_()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

}  // namespace synthgen
