// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace lta {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for item `index` under `seed`. Used wherever work
/// is split per sample/trial so serial and parallel runs draw the same numbers.
inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ (salt * 0x632be59bd9b4e019ULL)) + index);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0, std::uint64_t salt = 0) {
  return Rng(sub_seed(seed, index, salt));
}

}  // namespace lta
