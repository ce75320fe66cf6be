#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "trajcl/tensor.hpp"

namespace trajcl {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4a4a61b2510bdULL;
  return z ^ (z >> 31);
}

/// Collapses a key tuple (seed, epoch, batch, tag, ...) into one sub-seed so
/// independent random streams can be derived without coupling.
inline uint64_t mix_seed(std::initializer_list<uint64_t> keys) {
  uint64_t state = 0x8f1bbcdcbfa53e0bULL;
  uint64_t h = 0;
  for (uint64_t k : keys) {
    state ^= k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = splitmix64(state);
  }
  return h;
}

inline std::mt19937_64 make_rng(std::initializer_list<uint64_t> keys) {
  return std::mt19937_64(mix_seed(keys));
}

/// i.i.d. Gumbel(0,1) draws; -log(-log(u)) with u kept away from {0,1}.
template <typename S>
Tensor<S> gumbel_noise(std::vector<int64_t> dims, std::mt19937_64& rng) {
  Tensor<S> out(std::move(dims));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& x : out.v) {
    double u = unif(rng);
    if (u < 1e-12) u = 1e-12;
    if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
    x = static_cast<S>(-std::log(-std::log(u)));
  }
  return out;
}

}  // namespace trajcl
