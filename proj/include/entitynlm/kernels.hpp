#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Dense double-precision inner loops used by the autodiff tape. Every kernel
// has a portable scalar reference implementation; vectorized variants are
// compiled per ISA and chosen once at startup.
namespace enlm::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[m] += A[m x n] * x[n], A row-major
  void (*gemv)(const double* a, std::size_t m, std::size_t n, const double* x, double* y);
  // y[n] += A[m x n]^T * x[m]
  void (*gemv_t)(const double* a, std::size_t m, std::size_t n, const double* x, double* y);
  // A[m x n] += alpha * x[m] * y[n]^T
  void (*ger)(double alpha, const double* x, std::size_t m, const double* y, std::size_t n,
              double* a);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The table used by the library. Resolved on first use from CPU features;
// ENTITYNLM_KERNELS=scalar|avx2|neon overrides the choice.
const KernelTable& active();

// Force a variant (tests and benchmarks). Returns false if unavailable.
bool select(Isa isa);

std::string_view isa_name(Isa isa);

// Convenience wrappers over active().
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace enlm::kernels
