#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "entitynlm/error.hpp"
#include "entitynlm/rerank.hpp"
#include "fixtures.hpp"

namespace enlm::rerank {
namespace {

using testing::men;
using testing::out;
constexpr std::size_t E = kEpsilon;

// Clusters as sets of mention indices, so numbering cannot matter.
std::set<std::set<std::size_t>> clusters(const AntecedentTree& t) {
  std::vector<std::size_t> root(t.antecedent.size());
  std::iota(root.begin(), root.end(), 0);
  for (std::size_t j = 0; j < root.size(); ++j) {
    if (t.antecedent[j] != E) root[j] = root[t.antecedent[j]];
  }
  std::map<std::size_t, std::set<std::size_t>> by_root;
  for (std::size_t j = 0; j < root.size(); ++j) by_root[root[j]].insert(j);
  std::set<std::set<std::size_t>> out_set;
  for (auto& [r, members] : by_root) out_set.insert(members);
  return out_set;
}

// Straightforward restatement of the k-best procedure.
struct Reference {
  std::vector<AntecedentTree> trees;
  std::size_t distinct = 0;
};

Reference reference_kbest(const PairScores& ps, std::size_t k) {
  const std::size_t n = ps.size();
  AntecedentTree greedy{std::vector<std::size_t>(n, E)};
  for (std::size_t j = 0; j < n; ++j) {
    double best = ps.epsilon[j];
    std::size_t arg = E;
    // Ascending i: a tie goes to the closer mention, and any tie beats epsilon.
    bool any = false;
    for (std::size_t i = 0; i < j; ++i) {
      const double s = ps.pairs[j][i];
      if (!std::isfinite(s)) continue;
      if (s > best || (s == best && (arg == E || i > arg))) {
        best = s;
        arg = i;
        any = true;
      }
    }
    greedy.antecedent[j] = any ? arg : E;
  }
  struct Option {
    double gap;
    std::size_t j;
    std::size_t rank;  // antecedent index, epsilon ranked after all mentions
    std::size_t antecedent;
  };
  std::vector<Option> opts;
  for (std::size_t j = 0; j < n; ++j) {
    const double top = ps.score(j, greedy.antecedent[j]);
    for (std::size_t i = 0; i < j; ++i) {
      if (i != greedy.antecedent[j] && std::isfinite(ps.pairs[j][i])) opts.push_back({top - ps.pairs[j][i], j, i, i});
    }
    if (greedy.antecedent[j] != E) opts.push_back({top - ps.epsilon[j], j, n, E});
  }
  std::stable_sort(opts.begin(), opts.end(), [](const Option& a, const Option& b) {
    if (a.gap != b.gap) return a.gap < b.gap;
    if (a.j != b.j) return a.j < b.j;
    return a.rank < b.rank;
  });
  Reference ref;
  ref.trees.push_back(greedy);
  std::set<std::set<std::set<std::size_t>>> seen{clusters(greedy)};
  for (const Option& o : opts) {
    if (ref.trees.size() == k) break;
    AntecedentTree t = greedy;
    t.antecedent[o.j] = o.antecedent;
    if (seen.insert(clusters(t)).second) ref.trees.push_back(t);
  }
  ref.distinct = ref.trees.size();
  while (ref.trees.size() < k) ref.trees.push_back(ref.trees.back());
  return ref;
}

PairScores hand_fixture() {
  PairScores ps = PairScores::empty("hand", {{0, 0}, {2, 2}, {4, 5}, {7, 7}});
  ps.epsilon = {0.0, 0.5, 1.0, 0.2};
  ps.pairs[1][0] = 1.0;
  ps.pairs[2][0] = 0.3;
  ps.pairs[2][1] = 0.9;
  ps.pairs[3][0] = 2.0;
  ps.pairs[3][1] = 2.0;
  ps.pairs[3][2] = -1.0;
  return ps;
}

TEST(Greedy, Basics) {
  PairScores one = PairScores::empty("one", {{0, 0}});
  one.epsilon[0] = -3.0;
  EXPECT_EQ(greedy_decode(one).antecedent, (std::vector<std::size_t>{E}));
  PairScores two = PairScores::empty("two", {{0, 0}, {1, 1}});
  two.epsilon = {0.0, 0.0};
  two.pairs[1][0] = 0.5;
  EXPECT_EQ(greedy_decode(two).antecedent, (std::vector<std::size_t>{E, 0}));
  two.pairs[1][0] = 0.0;  // tie with epsilon: link wins
  EXPECT_EQ(greedy_decode(two).antecedent, (std::vector<std::size_t>{E, 0}));
}

TEST(Greedy, HandFixture) {
  const PairScores ps = hand_fixture();
  const AntecedentTree g = greedy_decode(ps);
  EXPECT_EQ(g.antecedent, (std::vector<std::size_t>{E, 0, E, 1}));
  EXPECT_DOUBLE_EQ(base_score(ps, g), 4.0);
  EXPECT_EQ(g.partition(), (std::vector<std::size_t>{0, 0, 1, 0}));
}

TEST(KBest, HandFixtureOrder) {
  const PairScores ps = hand_fixture();
  const auto list = kbest(ps, 8);
  ASSERT_EQ(list.size(), 8u);
  // Gap order: (3,0) 0 repeats the greedy partition, (2,1) 0.1, (1,eps) 0.5,
  // (2,0) 0.7 repeats, (3,eps) 1.8, (3,2) 3.0.
  const std::vector<std::vector<std::size_t>> expected = {
      {E, 0, E, 1}, {E, 0, 1, 1}, {E, E, E, 1}, {E, 0, E, E}, {E, 0, E, 2}};
  const std::vector<double> scores = {4.0, 3.9, 3.5, 2.2, 1.0};
  for (std::size_t n = 0; n < expected.size(); ++n) {
    EXPECT_EQ(list[n].tree.antecedent, expected[n]) << n;
    EXPECT_NEAR(list[n].base_score, scores[n], 1e-12) << n;
    EXPECT_FALSE(list[n].padding);
  }
  for (std::size_t n = 5; n < 8; ++n) {
    EXPECT_TRUE(list[n].padding);
    EXPECT_EQ(list[n].tree, list[4].tree);
  }
}

TEST(KBest, SmallCases) {
  const PairScores ps = hand_fixture();
  const auto one = kbest(ps, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].tree, greedy_decode(ps));
  EXPECT_THROW(kbest(ps, 0), ConfigError);

  PairScores two = PairScores::empty("two", {{0, 0}, {1, 1}});
  two.epsilon = {0.0, 0.0};
  two.pairs[1][0] = 1.0;
  const auto five = kbest(two, 5);
  ASSERT_EQ(five.size(), 5u);
  EXPECT_EQ(std::count_if(five.begin(), five.end(), [](const Candidate& c) { return !c.padding; }), 2);
  for (std::size_t n = 2; n < 5; ++n) EXPECT_EQ(five[n].tree, five[1].tree);
}

TEST(KBest, MatchesReferenceOnRandomFixtures) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 7;
    const PairScores ps = testing::random_pair_scores(n, rng, trial % 2 == 0);
    const std::size_t k = 1 + static_cast<std::size_t>(uniform01(rng) * 12);
    const auto list = kbest(ps, k);
    const Reference ref = reference_kbest(ps, k);
    ASSERT_EQ(list.size(), k);
    for (std::size_t m = 0; m < k; ++m) {
      ASSERT_EQ(list[m].tree, ref.trees[m]) << "trial " << trial << " entry " << m;
      EXPECT_EQ(list[m].padding, m >= ref.distinct);
      EXPECT_NEAR(list[m].base_score, base_score(ps, list[m].tree), 1e-12);
      EXPECT_LE(list[m].base_score, list[0].base_score + 1e-12);
    }
    std::set<std::set<std::set<std::size_t>>> parts;
    for (std::size_t m = 0; m < ref.distinct; ++m) EXPECT_TRUE(parts.insert(clusters(list[m].tree)).second);
    EXPECT_EQ(kbest(ps, k).size(), k);
    for (std::size_t m = 0; m < k; ++m) EXPECT_EQ(kbest(ps, k)[m].tree, list[m].tree);
  }
}

TEST(Inject, ReplacesLastUnlessListed) {
  const PairScores ps = hand_fixture();
  auto list = kbest(ps, 3);
  const auto before = list;
  inject(list, ps, {{E, 0, 1, 1}});  // already second
  EXPECT_EQ(list[2].tree, before[2].tree);
  const AntecedentTree fresh{{E, E, E, E}};
  inject(list, ps, fresh);
  EXPECT_EQ(list[2].tree, fresh);
  EXPECT_NEAR(list[2].base_score, 1.7, 1e-12);
  EXPECT_FALSE(list[2].padding);
  std::vector<Candidate> empty;
  EXPECT_THROW(inject(empty, ps, fresh), ContractError);
}

TEST(TextFormat, RoundTrip) {
  Rng rng(5);
  std::stringstream ss;
  std::vector<PairScores> docs = {hand_fixture(), testing::random_pair_scores(5, rng, false)};
  for (const auto& d : docs) write_pair_scores(ss, d);
  const auto back = read_pair_scores(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_EQ(back[d].doc_id, docs[d].doc_id);
    EXPECT_EQ(back[d].mentions, docs[d].mentions);
    EXPECT_EQ(back[d].epsilon, docs[d].epsilon);
    EXPECT_EQ(back[d].pairs, docs[d].pairs);
  }
}

TEST(TextFormat, ErrorsNameLine) {
  const std::string missing_eps = "doc a 2\nmention 0 0 0\nmention 1 1 1\npair 0 eps 1\npair 1 0 2\nend\n";
  const std::string forward = "doc a 2\nmention 0 0 0\nmention 1 1 1\npair 0 1 2\n";
  const std::string no_end = "doc a 1\nmention 0 0 0\npair 0 eps 1\n";
  const std::string disorder = "doc a 2\nmention 0 3 3\nmention 1 1 1\npair 0 eps 1\npair 1 eps 1\nend\n";
  const std::string junk = "# header\nbogus\n";
  for (const std::string& text : {missing_eps, forward, no_end, disorder, junk}) {
    std::istringstream in(text);
    EXPECT_THROW(read_pair_scores(in, "fixture"), IngestionError) << text;
  }
  std::istringstream in(forward);
  try {
    read_pair_scores(in, "fixture");
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("fixture:4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_pair_scores_file("/nonexistent/pairs.txt"), IngestionError);
}

TEST(Annotations, SingletonChainsDropped) {
  const PairScores ps = hand_fixture();
  // Chains {0,1,3} and {2}: mention 2 (tokens 4-5) is a singleton.
  const auto ann = to_annotations(ps, {{E, 0, E, 1}}, 9);
  const std::vector<entity::EntityAnnotation> expected = {men(1, 1), out(), men(1, 1), out(), out(),
                                                          out(),     out(), men(1, 1), out()};
  EXPECT_EQ(ann, expected);
  const auto two = to_annotations(ps, {{E, E, 1, 0}}, 9);
  EXPECT_EQ(two[0], men(1, 1));
  EXPECT_EQ(two[2], men(2, 1));
  EXPECT_EQ(two[4], men(2, 2));
  EXPECT_EQ(two[7], men(1, 1));
  EXPECT_THROW(to_annotations(ps, {{E, 0}}, 9), ContractError);
}

TEST(GoldTree, LinksClosestEarlierMention) {
  const eval::CorefPartition gold{{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}}, {7, 3, 7, 3, 7}};
  EXPECT_EQ(gold_tree(gold).antecedent, (std::vector<std::size_t>{E, E, 0, 1, 2}));
  const PairScores ps = synth_pair_scores("s", gold, 5.0, 0.0, 1);
  EXPECT_EQ(greedy_decode(ps), gold_tree(gold));
  EXPECT_EQ(ps.epsilon, (std::vector<double>{2.5, 2.5, 0.0, 0.0, 0.0}));
  EXPECT_EQ(synth_pair_scores("s", gold, 1.0, 0.3, 9).pairs, synth_pair_scores("s", gold, 1.0, 0.3, 9).pairs);
}

class Rerank : public ::testing::Test {
 protected:
  Rerank() : params_(testing::toy_params({}, 11)), ps_(hand_fixture()), tokens_{0, 1, 2, 3, 4, 5, 0, 1, 2} {}
  model::ModelParams params_;
  PairScores ps_;
  std::vector<std::size_t> tokens_;
};

TEST_F(Rerank, LmOnlySortsByJointLogProb) {
  const auto list = kbest(ps_, 5);
  const auto ranked = rerank(params_, tokens_, ps_, list, {});
  ASSERT_EQ(ranked.size(), 5u);
  for (const RankedCandidate& r : ranked) {
    const auto ann = to_annotations(ps_, list[r.original_index].tree, tokens_.size(), 3);
    EXPECT_EQ(r.log_prob, model::doc_log_prob(params_, tokens_, ann, {model::NoiseMode::kMean}).total);
    EXPECT_EQ(r.score, r.log_prob);
  }
  for (std::size_t n = 1; n < ranked.size(); ++n) EXPECT_GE(ranked[n - 1].score, ranked[n].score);
}

TEST_F(Rerank, AllPaddingKeepsOrder) {
  const Candidate c{greedy_decode(ps_), 4.0, false};
  const std::vector<Candidate> list(4, c);
  const auto ranked = rerank(params_, tokens_, ps_, list, {});
  for (std::size_t n = 0; n < 4; ++n) EXPECT_EQ(ranked[n].original_index, n);
}

TEST_F(Rerank, CombinedModeLimits) {
  const auto list = kbest(ps_, 5);
  const auto by_base = rerank(params_, tokens_, ps_, list, {Mode::kCombined, 0.0, 1.0});
  for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(by_base[n].original_index, n);
  const auto heavy = rerank(params_, tokens_, ps_, list, {Mode::kCombined, 1.0, 1e6});
  EXPECT_EQ(list[heavy[0].original_index].tree, greedy_decode(ps_));
  const auto mixed = rerank(params_, tokens_, ps_, list, {Mode::kCombined, 0.5, 2.0});
  for (const auto& r : mixed) EXPECT_NEAR(r.score, 0.5 * r.log_prob + 2.0 * r.base_score, 1e-12);
}

TEST_F(Rerank, InvalidCandidateSortsLast) {
  // Overlapping spans cannot be encoded.
  PairScores ps = PairScores::empty("overlap", {{0, 2}, {1, 3}});
  ps.epsilon = {0.0, 0.0};
  ps.pairs[1][0] = 1.0;
  std::vector<Candidate> list = {{{{E, 0}}, 1.0, false}, {{{E, E}}, 0.0, false}};
  const auto ranked = rerank(params_, tokens_, ps, list, {});
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].original_index, 1u);
  EXPECT_TRUE(ranked[0].valid);
  EXPECT_FALSE(ranked[1].valid);
  EXPECT_FALSE(ranked[1].error.empty());
}

}  // namespace
}  // namespace enlm::rerank
