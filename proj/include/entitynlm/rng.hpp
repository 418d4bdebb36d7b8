#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace enlm {

using Rng = std::mt19937_64;

// SplitMix64 finalizer over (seed, stream); used to derive independent
// per-document and per-sample seeds from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

// Uniform on [0, 1) from the top 53 bits. Independent of the standard
// library's distribution implementations, so streams are portable.
double uniform01(Rng& rng);

// Box-Muller; one draw per call.
double standard_normal(Rng& rng);

// Draw an index from log-probabilities (need not be normalized).
std::size_t sample_log_categorical(std::span<const double> log_probs, Rng& rng);

}  // namespace enlm
