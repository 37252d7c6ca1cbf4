#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace tvae {

using Rng = std::mt19937_64;

// Independent stream for (seed, index); synthesis and evaluation use one
// stream per item so results do not depend on processing order.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x7A5Eu};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double standard_gumbel(Rng& rng) {
  double u = uniform01(rng);
  u = std::max(u, std::numeric_limits<double>::min());
  return -std::log(-std::log(u));
}

}  // namespace tvae
