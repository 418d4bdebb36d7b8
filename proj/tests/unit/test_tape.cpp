#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "entitynlm/error.hpp"
#include "entitynlm/rng.hpp"
#include "entitynlm/tape.hpp"

namespace enlm {
namespace {

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

// Central differences over every entry of every input against backward().
void check_op(const char* name, std::vector<Tensor> inputs, const Build& build) {
  SCOPED_TRACE(name);
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.param(t));
  const Var loss = build(tape, vars);
  ASSERT_TRUE(tape.shape(loss).empty()) << "loss must be scalar";
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Var v : vars) analytic.emplace_back(tape.grad(v).begin(), tape.grad(v).end());

  auto eval = [&] {
    Tape t(false);
    std::vector<Var> vs;
    for (const Tensor& x : inputs) vs.push_back(t.param(x));
    return t.scalar_value(build(t, vs));
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = inputs[i][k];
      inputs[i][k] = saved + h;
      const double up = eval();
      inputs[i][k] = saved - h;
      const double down = eval();
      inputs[i][k] = saved;
      EXPECT_LT(rel(analytic[i][k], (up - down) / (2 * h)), 1e-6) << "input " << i << " entry " << k;
    }
  }
}

Tensor rand_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = 2.0 * uniform01(rng) - 1.0;
  return t;
}

// Weighted sum so every output entry gets a distinct upstream gradient.
Var probe(Tape& tape, Var x) {
  const std::size_t n = tape.value(x).size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.3 + 0.7 * static_cast<double>(i + 1) / static_cast<double>(n);
  if (tape.shape(x).empty()) return tape.affine(x, w[0], 0.0);
  return tape.dot(tape.constant(w), x);
}

TEST(TapeGradients, ElementwiseOps) {
  Rng rng(1);
  const Tensor a = rand_tensor({5}, rng);
  const Tensor b = rand_tensor({5}, rng);
  check_op("add", {a, b}, [](Tape& t, const auto& v) { return probe(t, t.add(v[0], v[1])); });
  check_op("sub", {a, b}, [](Tape& t, const auto& v) { return probe(t, t.sub(v[0], v[1])); });
  check_op("mul", {a, b}, [](Tape& t, const auto& v) { return probe(t, t.mul(v[0], v[1])); });
  check_op("affine", {a}, [](Tape& t, const auto& v) { return probe(t, t.affine(v[0], -1.5, 0.25)); });
  check_op("tanh", {a}, [](Tape& t, const auto& v) { return probe(t, t.tanh(v[0])); });
  check_op("sigmoid", {a}, [](Tape& t, const auto& v) { return probe(t, t.sigmoid(v[0])); });
  check_op("mask", {a}, [](Tape& t, const auto& v) { return probe(t, t.mask(v[0], {0, 2, 2, 0, 2})); });
  check_op("scale", {a, Tensor::scalar(0.7)}, [](Tape& t, const auto& v) { return probe(t, t.scale(v[0], v[1])); });
  check_op("l2_normalize", {a}, [](Tape& t, const auto& v) { return probe(t, t.l2_normalize(v[0])); });
}

TEST(TapeGradients, Reductions) {
  Rng rng(2);
  const Tensor a = rand_tensor({4}, rng);
  const Tensor b = rand_tensor({4}, rng);
  check_op("dot", {a, b}, [](Tape& t, const auto& v) { return t.dot(v[0], v[1]); });
  check_op("sum", {a}, [](Tape& t, const auto& v) { return t.sum(t.mul(v[0], v[0])); });
  check_op("sum-list", {a, b}, [](Tape& t, const auto& v) {
    const Var parts[] = {t.pick(v[0], 1), t.pick(v[1], 3), t.dot(v[0], v[1])};
    return t.sum(parts);
  });
  check_op("log_softmax", {a}, [](Tape& t, const auto& v) { return probe(t, t.log_softmax(v[0])); });
  check_op("stack", {a}, [](Tape& t, const auto& v) {
    const Var parts[] = {t.pick(v[0], 2), t.pick(v[0], 0), t.dot(v[0], v[0])};
    return probe(t, t.log_softmax(t.stack(parts)));
  });
  check_op("concat", {a, b}, [](Tape& t, const auto& v) { return probe(t, t.tanh(t.concat(v[0], v[1]))); });
}

TEST(TapeGradients, MatrixOps) {
  Rng rng(3);
  const Tensor w = rand_tensor({3, 4}, rng);
  const Tensor x = rand_tensor({4}, rng);
  const Tensor y = rand_tensor({3}, rng);
  const Tensor b = rand_tensor({3}, rng);
  const Tensor m = rand_tensor({4, 2}, rng);
  check_op("matvec", {w, x}, [](Tape& t, const auto& v) { return probe(t, t.matvec(v[0], v[1])); });
  check_op("matvec_t", {w, y}, [](Tape& t, const auto& v) { return probe(t, t.matvec_t(v[0], v[1])); });
  check_op("matmul", {w, m}, [](Tape& t, const auto& v) {
    return t.sum(t.tanh(t.matmul(v[0], v[1])));
  });
  check_op("bilinear", {y, w, x}, [](Tape& t, const auto& v) { return t.bilinear(v[0], v[1], v[2]); });
  check_op("linear", {w, b, x}, [](Tape& t, const auto& v) { return probe(t, t.linear(v[0], v[1], v[2], 1, 3)); });
  check_op("linear-nobias", {w, x}, [](Tape& t, const auto& v) { return probe(t, t.linear(v[0], Var{}, v[1], 0, 2)); });
  check_op("lookup", {w}, [](Tape& t, const auto& v) { return probe(t, t.tanh(t.lookup(v[0], 2))); });
}

TEST(TapeGradients, SharedSubexpressionsAccumulate) {
  Rng rng(4);
  const Tensor a = rand_tensor({3}, rng);
  check_op("reuse", {a}, [](Tape& t, const auto& v) {
    const Var s = t.sigmoid(v[0]);
    return t.dot(s, t.tanh(t.add(s, v[0])));
  });
}

TEST(Tape, ValuesOfBasicOps) {
  Tape t(false);
  const Var a = t.constant(std::vector<double>{1.0, 2.0, 3.0});
  const Var ls = t.log_softmax(a);
  double mass = 0.0;
  for (double v : t.value(ls)) mass += std::exp(v);
  EXPECT_NEAR(mass, 1.0, 1e-15);
  const Var n = t.l2_normalize(a);
  EXPECT_NEAR(t.scalar_value(t.dot(n, n)), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(t.scalar_value(t.sum(a)), 6.0);
}

TEST(Tape, LogSoftmaxIsStableForLargeInputs) {
  Tape t(false);
  const Var ls = t.log_softmax(t.constant(std::vector<double>{1000.0, 1000.0}));
  EXPECT_NEAR(t.value(ls)[0], std::log(0.5), 1e-12);
}

TEST(Tape, TruncateDropsLaterNodes) {
  Tape t;
  const Var a = t.constant(std::vector<double>{1.0, 2.0});
  const std::size_t mark = t.size();
  t.tanh(a);
  t.tanh(a);
  t.truncate(mark);
  EXPECT_EQ(t.size(), mark);
  EXPECT_DOUBLE_EQ(t.value(a)[1], 2.0);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape t;
  const Var a = t.constant(std::vector<double>{1.0, 2.0});
  const Var b = t.constant(std::vector<double>{1.0, 2.0, 3.0});
  EXPECT_THROW(t.add(a, b), DimensionError);
  EXPECT_THROW(t.pick(a, 2), Error);
}

}  // namespace
}  // namespace enlm
