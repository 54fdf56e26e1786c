#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace synthalign {

using Rng = std::mt19937_64;

/// Uniform index in [0, n) by rejection sampling. Unlike
/// std::uniform_int_distribution the sequence is identical on every
/// standard library, which keeps seeded runs portable.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound);
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return static_cast<std::size_t>(draw % bound);
}

template <typename T>
void portable_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

}  // namespace synthalign
