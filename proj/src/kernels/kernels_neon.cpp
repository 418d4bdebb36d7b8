#include "entitynlm/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

namespace enlm::kernels {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double sum = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_neon(const double* a, std::size_t m, std::size_t n, const double* x, double* y) {
  for (std::size_t r = 0; r < m; ++r) y[r] += dot_neon(a + r * n, x, n);
}

void gemv_t_neon(const double* a, std::size_t m, std::size_t n, const double* x, double* y) {
  for (std::size_t r = 0; r < m; ++r) {
    if (x[r] != 0.0) axpy_neon(x[r], a + r * n, y, n);
  }
}

void ger_neon(double alpha, const double* x, std::size_t m, const double* y, std::size_t n,
              double* a) {
  for (std::size_t r = 0; r < m; ++r) {
    const double s = alpha * x[r];
    if (s != 0.0) axpy_neon(s, y, a + r * n, n);
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{Isa::kNeon, dot_neon,    axpy_neon,
                                 gemv_neon,  gemv_t_neon, ger_neon};
  return &table;
}

}  // namespace enlm::kernels

#else

namespace enlm::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace enlm::kernels

#endif
