#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace advmix {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Named sub-stream of a base seed ("dataset", "decoder", "train", ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  return splitmix64(base ^ splitmix64(fnv1a64(stream)));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t base, std::string_view stream) {
  return Rng(derive_seed(base, stream));
}

}  // namespace advmix
