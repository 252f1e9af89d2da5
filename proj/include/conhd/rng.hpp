#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace conhd {

using Rng = std::mt19937_64;

/// Seed splitting: a component's stream is seeded by
/// splitmix64(seed XOR fnv1a64(component)). Streams of different components
/// never depend on each other, so adding a component does not shift others.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component);

inline Rng make_rng(std::uint64_t seed, std::string_view component) {
  return Rng(derive_seed(seed, component));
}

/// Uniform integer in [lo, hi] computed without std::uniform_int_distribution,
/// whose output is implementation-defined.
std::uint64_t uniform_index(Rng& rng, std::uint64_t lo, std::uint64_t hi);

/// Uniform real in [0, 1) built from the top 53 bits.
double uniform01(Rng& rng);

double uniform_real(Rng& rng, double lo, double hi);

/// Standard normal via Box-Muller (portable across standard libraries).
double standard_normal(Rng& rng);

}  // namespace conhd
