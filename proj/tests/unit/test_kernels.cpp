#include <gtest/gtest.h>

#include <vector>

#include "entitynlm/kernels.hpp"
#include "entitynlm/rng.hpp"
#include "entitynlm/tape.hpp"

namespace enlm {
namespace {

std::vector<double> draw(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

std::vector<const kernels::KernelTable*> vector_tables() {
  std::vector<const kernels::KernelTable*> out;
  if (auto* t = kernels::avx2_table()) out.push_back(t);
  if (auto* t = kernels::neon_table()) out.push_back(t);
  return out;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * (1.0 + std::abs(a[i]))) << i;
}

TEST(Kernels, VectorVariantsMatchScalar) {
  const auto tables = vector_tables();
  if (tables.empty()) GTEST_SKIP() << "no vector kernels on this CPU";
  const kernels::KernelTable& ref = kernels::scalar_table();
  Rng rng(7);
  for (const kernels::KernelTable* t : tables) {
    SCOPED_TRACE(std::string(kernels::isa_name(t->isa)));
    for (std::size_t m : {1u, 3u, 4u, 7u, 16u, 33u}) {
      for (std::size_t n : {1u, 2u, 5u, 8u, 13u, 64u}) {
        const auto a = draw(m * n, rng);
        const auto x = draw(n, rng);
        const auto y = draw(m, rng);
        EXPECT_NEAR(ref.dot(x.data(), x.data(), n), t->dot(x.data(), x.data(), n), 1e-12 * n);

        auto y1 = draw(n, rng);
        auto y2 = y1;
        ref.axpy(0.37, x.data(), y1.data(), n);
        t->axpy(0.37, x.data(), y2.data(), n);
        expect_close(y1, y2);

        std::vector<double> g1(m, 0.5), g2(m, 0.5);
        ref.gemv(a.data(), m, n, x.data(), g1.data());
        t->gemv(a.data(), m, n, x.data(), g2.data());
        expect_close(g1, g2);

        std::vector<double> h1(n, -0.25), h2(n, -0.25);
        ref.gemv_t(a.data(), m, n, y.data(), h1.data());
        t->gemv_t(a.data(), m, n, y.data(), h2.data());
        expect_close(h1, h2);

        auto r1 = a;
        auto r2 = a;
        ref.ger(1.5, y.data(), m, x.data(), n, r1.data());
        t->ger(1.5, y.data(), m, x.data(), n, r2.data());
        expect_close(r1, r2);
      }
    }
  }
}

TEST(Kernels, ScalarReferenceIsPlainArithmetic) {
  const kernels::KernelTable& k = kernels::scalar_table();
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};  // 2 x 3
  const std::vector<double> x = {1, 0, -1};
  std::vector<double> y = {10, 20};
  k.gemv(a.data(), 2, 3, x.data(), y.data());
  EXPECT_EQ(y, (std::vector<double>{8, 18}));
  std::vector<double> z(3, 0.0);
  const std::vector<double> w = {1, 1};
  k.gemv_t(a.data(), 2, 3, w.data(), z.data());
  EXPECT_EQ(z, (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(k.dot(a.data(), x.data(), 3), -2.0);
}

TEST(Kernels, TapeResultsAgreeAcrossVariants) {
  const auto tables = vector_tables();
  if (tables.empty()) GTEST_SKIP() << "no vector kernels on this CPU";
  Rng rng(3);
  const Tensor w = Tensor::matrix(9, 11, draw(99, rng));
  const Tensor x = Tensor::vector(draw(11, rng));
  auto run = [&] {
    Tape tape;
    const Var wv = tape.param(w);
    const Var xv = tape.param(x);
    const Var loss = tape.sum(tape.tanh(tape.matvec(wv, xv)));
    tape.backward(loss);
    std::vector<double> out(tape.grad(wv).begin(), tape.grad(wv).end());
    out.push_back(tape.scalar_value(loss));
    return out;
  };
  const kernels::Isa previous = kernels::active().isa;
  ASSERT_TRUE(kernels::select(kernels::Isa::kScalar));
  const auto ref = run();
  for (const kernels::KernelTable* t : tables) {
    ASSERT_TRUE(kernels::select(t->isa));
    expect_close(ref, run());
  }
  kernels::select(previous);
}

}  // namespace
}  // namespace enlm
