#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "entitynlm/error.hpp"
#include "entitynlm/nn.hpp"
#include "fixtures.hpp"

namespace enlm {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TEST(Lstm, MatchesHandWrittenCell) {
  Rng rng(5);
  nn::LstmCell cell = nn::LstmCell::zeros(3, 2);
  for (std::size_t g = 0; g < 4; ++g) {
    for (Tensor* t : {&cell.w_input[g], &cell.w_hidden[g], &cell.bias[g]}) {
      for (double& v : t->data()) v = uniform01(rng) - 0.5;
    }
  }
  const std::vector<double> x = {0.3, -0.2, 0.9};
  const std::vector<double> h = {0.1, -0.4};
  const std::vector<double> c = {0.5, 0.2};

  auto gate = [&](std::size_t g, std::size_t row) {
    double s = cell.bias[g][row];
    for (std::size_t j = 0; j < 3; ++j) s += cell.w_input[g][row * 3 + j] * x[j];
    for (std::size_t j = 0; j < 2; ++j) s += cell.w_hidden[g][row * 2 + j] * h[j];
    return s;
  };
  Tape tape(false);
  const nn::LstmOutput out =
      nn::lstm_step(tape, cell, tape.constant(h), tape.constant(c), tape.constant(x));
  for (std::size_t k = 0; k < 2; ++k) {
    const double i = sigmoid(gate(0, k));
    const double f = sigmoid(gate(1, k));
    const double o = sigmoid(gate(2, k));
    const double u = std::tanh(gate(3, k));
    const double c_new = f * c[k] + i * u;
    EXPECT_NEAR(tape.value(out.c)[k], c_new, 1e-14);
    EXPECT_NEAR(tape.value(out.h)[k], o * std::tanh(c_new), 1e-14);
  }
}

TEST(Lstm, WrongInputWidthThrows) {
  const nn::LstmCell cell = nn::LstmCell::zeros(3, 2);
  Tape tape(false);
  const Var h = tape.constant(std::vector<double>(2, 0.0));
  EXPECT_THROW(nn::lstm_step(tape, cell, h, h, tape.constant(std::vector<double>(4, 0.0))), DimensionError);
}

TEST(ClassMap, RowsAreContiguousPerClass) {
  const nn::ClassMap m({1, 0, 1, 2, 0});
  EXPECT_EQ(m.num_classes(), 3u);
  for (std::size_t w = 0; w < 5; ++w) {
    const std::size_t c = m.class_of(w);
    EXPECT_GE(m.row_of(w), m.class_begin(c));
    EXPECT_LT(m.row_of(w), m.class_end(c));
    EXPECT_EQ(m.word_at_row(m.row_of(w)), w);
  }
}

TEST(ClassMap, RejectsEmptyClass) { EXPECT_THROW(nn::ClassMap({0, 2, 2}), Error); }

TEST(Cfsm, NormalizesOverVocabulary) {
  Rng rng(9);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t vocab = 3 + trial % 7;
    const std::size_t classes = 1 + trial % 3;
    nn::CfsmLayer layer = nn::CfsmLayer::zeros(testing::round_robin_classes(vocab, classes), 4);
    for (Tensor* t : {&layer.class_weights, &layer.class_bias, &layer.word_weights, &layer.word_bias}) {
      for (double& v : t->data()) v = 4.0 * uniform01(rng) - 2.0;
    }
    Tape tape(false);
    const nn::BoundCfsm b = nn::bind(tape, layer);
    std::vector<double> r(4);
    for (double& v : r) v = 2.0 * uniform01(rng) - 1.0;
    const Var rep = tape.constant(r);
    const auto all = nn::cfsm_log_probs(tape, b, rep);
    double mass = 0.0;
    for (std::size_t w = 0; w < vocab; ++w) {
      mass += std::exp(all[w]);
      EXPECT_NEAR(all[w], tape.scalar_value(nn::cfsm_log_prob(tape, b, rep, w)), 1e-12);
    }
    EXPECT_NEAR(mass, 1.0, 1e-12);
  }
}

TEST(Cfsm, ZeroWeightsGiveUniformWithinClassStructure) {
  // Two classes of sizes 2 and 1: uniform class choice, uniform word within.
  const nn::CfsmLayer layer = nn::CfsmLayer::zeros(nn::ClassMap({0, 0, 1}), 2);
  Tape tape(false);
  const auto lp = nn::cfsm_log_probs(tape, nn::bind(tape, layer), tape.constant(std::vector<double>{1.0, 1.0}));
  EXPECT_NEAR(lp[0], std::log(0.25), 1e-15);
  EXPECT_NEAR(lp[2], std::log(0.5), 1e-15);
}

TEST(Cfsm, SamplingFollowsDistribution) {
  Rng rng(11);
  nn::CfsmLayer layer = nn::CfsmLayer::zeros(testing::round_robin_classes(5, 2), 2);
  for (double& v : layer.word_bias.data()) v = uniform01(rng);
  for (double& v : layer.class_bias.data()) v = uniform01(rng);
  Tape tape(false);
  const nn::BoundCfsm b = nn::bind(tape, layer);
  const Var rep = tape.constant(std::vector<double>{0.0, 0.0});
  const auto lp = nn::cfsm_log_probs(tape, b, rep);
  std::vector<double> freq(5, 0.0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) freq[nn::cfsm_sample(tape, b, rep, rng)] += 1.0 / n;
  for (std::size_t w = 0; w < 5; ++w) EXPECT_NEAR(freq[w], std::exp(lp[w]), 0.01);
}

TEST(AssignClasses, FrequencyBinning) {
  const std::vector<std::uint64_t> counts = {100, 1, 50, 50, 1, 1};
  const auto cls = nn::assign_classes(counts, 3);
  ASSERT_EQ(cls.size(), counts.size());
  std::set<std::size_t> used(cls.begin(), cls.end());
  EXPECT_EQ(used.size(), 3u);
  // Most frequent word sits alone in the first class.
  EXPECT_EQ(cls[0], 0u);
  EXPECT_LE(cls[2], cls[1]);
  EXPECT_THROW(nn::assign_classes(counts, 7), Error);
}

TEST(AssignClasses, MapOverloadUsesKeyOrderForTies) {
  const std::map<std::string, std::uint64_t> counts = {{"b", 2}, {"a", 2}, {"c", 1}};
  const auto cls = nn::assign_classes(counts, 3);
  EXPECT_EQ(cls.at("a"), 0u);
  EXPECT_EQ(cls.at("b"), 1u);
  EXPECT_EQ(cls.at("c"), 2u);
}

TEST(Glorot, StaysInBound) {
  nn::GlorotInit init(3);
  Tensor t({20, 30});
  init.fill(t);
  const double bound = std::sqrt(6.0 / 50.0);
  EXPECT_DOUBLE_EQ(nn::GlorotInit::bound(t), bound);
  double sum_sq = 0.0;
  for (double v : t.data()) {
    EXPECT_LE(std::abs(v), bound);
    sum_sq += v * v;
  }
  EXPECT_NEAR(sum_sq / 600.0, bound * bound / 3.0, 0.02);
}

TEST(Dropout, InvertedScalingKeepsExpectation) {
  Rng rng(1);
  Tape tape(false);
  const Var x = tape.constant(std::vector<double>(20000, 1.0));
  const Var y = nn::dropout(tape, x, 0.25, rng);
  double mean = 0.0;
  for (double v : tape.value(y)) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 4.0 / 3.0) < 1e-15);
    mean += v / 20000.0;
  }
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_EQ(nn::dropout(tape, x, 0.0, rng), x);
}

}  // namespace
}  // namespace enlm
