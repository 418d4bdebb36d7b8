#include "entitynlm/kernels.hpp"

namespace enlm::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* a, std::size_t m, std::size_t n, const double* x, double* y) {
  for (std::size_t r = 0; r < m; ++r) y[r] += dot_scalar(a + r * n, x, n);
}

void gemv_t_scalar(const double* a, std::size_t m, std::size_t n, const double* x, double* y) {
  for (std::size_t r = 0; r < m; ++r) {
    if (x[r] != 0.0) axpy_scalar(x[r], a + r * n, y, n);
  }
}

void ger_scalar(double alpha, const double* x, std::size_t m, const double* y, std::size_t n,
                double* a) {
  for (std::size_t r = 0; r < m; ++r) {
    const double s = alpha * x[r];
    if (s != 0.0) axpy_scalar(s, y, a + r * n, n);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::kScalar, dot_scalar, axpy_scalar,
                                 gemv_scalar,  gemv_t_scalar, ger_scalar};
  return table;
}

}  // namespace enlm::kernels
