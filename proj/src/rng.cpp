#include "entitynlm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "entitynlm/error.hpp"

namespace enlm {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t sample_log_categorical(std::span<const double> log_probs, Rng& rng) {
  if (log_probs.empty()) throw ContractError("sample_log_categorical: empty distribution");
  const double mx = *std::max_element(log_probs.begin(), log_probs.end());
  double total = 0.0;
  for (double lp : log_probs) total += std::exp(lp - mx);
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    u -= std::exp(log_probs[i] - mx);
    if (u < 0.0) return i;
  }
  // Rounding left a sliver of mass; return the last index with support.
  for (std::size_t i = log_probs.size(); i-- > 0;) {
    if (std::isfinite(log_probs[i])) return i;
  }
  return log_probs.size() - 1;
}

}  // namespace enlm
