#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace blockopt {

// Labeled RNG streams derived from one master seed. Each purpose (graph
// sampling, data, noise, init, schedule) gets an independent stream, so
// changing e.g. the block count never perturbs the problem instance.
namespace rng {

inline std::uint64_t fnv1a(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t salt = 0) {
  return splitmix64(splitmix64(master ^ fnv1a(label)) ^ salt);
}

inline std::mt19937_64 stream(std::uint64_t master, std::string_view label,
                              std::uint64_t salt = 0) {
  return std::mt19937_64(derive_seed(master, label, salt));
}

}  // namespace rng
}  // namespace blockopt
