#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "entitynlm/checkpoint.hpp"
#include "entitynlm/error.hpp"
#include "entitynlm/eval.hpp"
#include "entitynlm/model.hpp"
#include "fixtures.hpp"

namespace enlm::model {
using enlm::Checkpoint;
namespace {

using testing::men;
using testing::out;

double mass(std::span<const double> lp) {
  double s = 0.0;
  for (double v : lp) s += std::exp(v);
  return s;
}

std::vector<std::vector<double>> analytic_grads(const ModelParams& p, std::span<const std::size_t> words,
                                                std::span<const EntityAnnotation> ann, RunOptions opts) {
  Tape tape;
  Runner run(tape, p, opts);
  const DocScore s = score_document(run, words, ann);
  tape.backward(s.total);
  std::vector<std::vector<double>> g;
  for (Var v : run.bound().all) g.emplace_back(tape.grad(v).begin(), tape.grad(v).end());
  return g;
}

TEST(ModelConfig, EntityDimMustMatchHidden) {
  ModelConfig c;
  c.vocab_size = 5;
  c.num_classes = 2;
  c.hidden_dim = 4;
  c.entity_dim = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c.entity_dim = 0;
  EXPECT_NO_THROW(c.validate());
  c.num_classes = 6;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelParams, ShapeMismatchIsRejected) {
  ModelParams p = testing::toy_params({}, 1);
  p.w_length = Tensor({2, 2});
  EXPECT_THROW(p.validate(), DimensionError);
}

TEST(ModelParams, InitializeZeroesBiasesAndBlindWeights) {
  ModelConfig c;
  c.vocab_size = 8;
  c.num_classes = 2;
  c.word_dim = 4;
  c.hidden_dim = 4;
  c.entity_blind = true;
  const ModelParams p = ModelParams::initialize(c, testing::round_robin_classes(8, 2), 3);
  for (double v : p.w_e.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.w_r.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.lstm.bias[0].data()) EXPECT_EQ(v, 0.0);
  double s = 0.0;
  for (double v : p.w_entity.data()) s += std::abs(v);
  EXPECT_GT(s, 0.0);
}

TEST(Distributions, NormalizeForRandomParameterizations) {
  Rng rng(101);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    testing::ToySpec spec;
    spec.scale = 0.5 + 2.0 * uniform01(rng);
    spec.max_length = 1 + seed % 4;
    const ModelParams p = testing::toy_params(spec, seed);
    Tape tape(false);
    Runner run(tape, p, {NoiseMode::kSampled, seed, 0.0, 0});
    DocState st = run.start();
    const auto words = testing::random_words(5, spec.vocab, rng);
    const auto traj = testing::random_trajectory(5, spec.max_length, rng);
    for (std::size_t t = 0; t < words.size(); ++t) {
      const Var cand = run.create_entity();
      EXPECT_NEAR(mass(tape.value(run.dist_r(st.h))), 1.0, 1e-12);
      EXPECT_NEAR(mass(tape.value(run.dist_e(st, st.h, cand))), 1.0, 1e-12);
      EXPECT_NEAR(mass(tape.value(run.dist_l(st.h, cand))), 1.0, 1e-12);
      EXPECT_NEAR(mass(run.dist_x_all(st.h, st.e_current)), 1.0, 1e-12);
      run.advance_lstm(st, t, words[t]);
      run.commit(st, traj[t], cand);
    }
  }
}

TEST(DocLogProb, ZeroWeightsSingleToken) {
  testing::ToySpec spec;
  spec.scale = 0.0;
  ModelParams p = testing::toy_params(spec, 0);
  p.r_embed.fill(1.0);  // only needs a direction
  const std::vector<std::size_t> words = {3};
  const std::vector<EntityAnnotation> ann = {out()};
  const DocLogProb lp = doc_log_prob(p, words, ann);
  // Two classes of three words each: uniform class, uniform word.
  EXPECT_NEAR(lp.total, std::log(0.5) + std::log(1.0 / 6.0), 1e-14);
}

TEST(DocLogProb, TotalEqualsSumOfSteps) {
  Rng rng(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelParams p = testing::toy_params({}, seed);
    const auto words = testing::random_words(9, 6, rng);
    const auto traj = testing::random_trajectory(9, 3, rng);
    const DocLogProb lp = doc_log_prob(p, words, traj, {NoiseMode::kSampled, seed, 0.0, 0});
    double sum = 0.0;
    for (const StepDecision& d : lp.steps) sum += d.total();
    EXPECT_NEAR(lp.total, sum, 1e-12);
  }
}

TEST(DocLogProb, ScoresOneEntityDecisionPerMention) {
  const auto rows = testing::running_example_rows();
  const auto ann = testing::annotations_of(rows);
  testing::ToySpec spec;
  spec.max_length = 3;
  const ModelParams p = testing::toy_params(spec, 4);
  Rng rng(1);
  const auto words = testing::random_words(ann.size(), spec.vocab, rng);
  const DocLogProb lp = doc_log_prob(p, words, ann);
  std::size_t decisions = 0;
  for (const StepDecision& d : lp.steps) decisions += d.e_argmax != 0 ? 1 : 0;
  EXPECT_EQ(decisions, 6u);
}

TEST(DocLogProb, RejectsInvalidAnnotations) {
  const ModelParams p = testing::toy_params({}, 1);
  const std::vector<std::size_t> words = {1, 2};
  EXPECT_THROW(doc_log_prob(p, words, std::vector<EntityAnnotation>{men(2, 1), out()}), ContractError);
  EXPECT_THROW(doc_log_prob(p, words, std::vector<EntityAnnotation>{men(1, 2), out()}), ContractError);
  EXPECT_THROW(doc_log_prob(p, words, std::vector<EntityAnnotation>{out()}), ContractError);
  const std::vector<std::size_t> bad = {1, 99};
  EXPECT_THROW(doc_log_prob(p, bad, std::vector<EntityAnnotation>{out(), out()}), VocabularyError);
}

TEST(Gradients, MatchFiniteDifferencesOnTwoEntityToy) {
  const auto ann = testing::two_entity_toy();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelParams p = testing::toy_params({}, 40 + seed);
    Rng rng(seed);
    const auto words = testing::random_words(ann.size(), 6, rng);
    const RunOptions opts{NoiseMode::kSampled, 1000 + seed, 0.0, 0};
    const auto g = analytic_grads(p, words, ann, opts);
    const auto rep =
        testing::check_gradients(p, [&] { return doc_log_prob(p, words, ann, opts).total; }, g);
    EXPECT_LT(rep.worst, 1e-4) << "seed " << seed << " worst in " << rep.worst_tensor;
  }
}

TEST(Gradients, ChainedUpdatesThroughTwoTokenMention) {
  const std::vector<EntityAnnotation> ann = {men(1, 2), men(1, 1), out(), men(1, 2), men(1, 1)};
  ModelParams p = testing::toy_params({}, 77);
  const std::vector<std::size_t> words = {1, 4, 2, 0, 5};
  const RunOptions opts{NoiseMode::kMean, 0, 0.0, 0};
  const auto g = analytic_grads(p, words, ann, opts);
  const auto rep = testing::check_gradients(p, [&] { return doc_log_prob(p, words, ann, opts).total; }, g);
  EXPECT_LT(rep.worst, 1e-4) << rep.worst_tensor;
}

TEST(Gradients, ProposalHeads) {
  const auto ann = testing::two_entity_toy();
  ModelParams p = testing::toy_params({}, 9);
  const std::vector<std::size_t> words = {0, 1, 2, 3, 4, 5};
  auto score = [&](Tape& tape) {
    Runner run(tape, p, {NoiseMode::kSampled, 3, 0.0, 0});
    const Var s = proposal_score(run, words, ann);
    return std::make_pair(s, run.bound().all);
  };
  Tape tape;
  const auto [s, all] = score(tape);
  tape.backward(s);
  std::vector<std::vector<double>> g;
  for (Var v : all) g.emplace_back(tape.grad(v).begin(), tape.grad(v).end());
  const auto rep = testing::check_gradients(
      p,
      [&] {
        Tape t(false);
        return t.scalar_value(score(t).first);
      },
      g);
  EXPECT_LT(rep.worst, 1e-4) << rep.worst_tensor;
}

TEST(Ablation, BlindWordTermsEqualPlainRnnlm) {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelParams p = testing::toy_params({}, seed);
    p.w_e.fill(0.0);
    p.w_r.fill(0.0);
    const auto words = testing::random_words(10, 6, rng);
    const auto traj = testing::random_trajectory(10, 3, rng);
    const auto ref = rnnlm_word_log_probs(p, words);
    const DocLogProb lp = doc_log_prob(p, words, traj, {NoiseMode::kSampled, seed, 0.0, 0});
    for (std::size_t t = 0; t < words.size(); ++t) EXPECT_EQ(lp.steps[t].log_x, ref[t]) << t;
  }
}

TEST(EntityUpdate, DeltaLimits) {
  ModelParams p = testing::toy_params({}, 2);
  Tape tape(false);
  Runner run(tape, p);
  const Var e = tape.constant(std::vector<double>{1, 0, 0, 0});
  const Var h = tape.constant(std::vector<double>{0.2, 0.4, -0.4, 0.0});
  // W_delta = 0 gives delta = 1/2, so the update is normalize(e + h).
  p.w_delta.fill(0.0);
  const auto half = tape.value(run.update_entity(e, h));
  const double n1 = std::sqrt(1.2 * 1.2 + 0.4 * 0.4 + 0.4 * 0.4);
  EXPECT_NEAR(half[0], 1.2 / n1, 1e-12);
  EXPECT_NEAR(half[2], -0.4 / n1, 1e-12);
  // Very negative score: delta -> 0 and the entity becomes normalize(h).
  for (std::size_t k = 0; k < 4; ++k) p.w_delta[k * 4 + k] = -1e4;
  const auto low = tape.value(run.update_entity(e, h));
  const double n2 = std::sqrt(0.2 * 0.2 + 0.4 * 0.4 + 0.4 * 0.4);
  EXPECT_NEAR(low[0], 0.2 / n2, 1e-12);
  EXPECT_NEAR(low[1], 0.4 / n2, 1e-12);
}

TEST(EntityState, CurrentTracksMostRecentMention) {
  Rng rng(12);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ModelParams p = testing::toy_params({}, seed);
    const auto words = testing::random_words(12, 6, rng);
    const auto traj = testing::random_trajectory(12, 3, rng);
    const DocLogProb lp = doc_log_prob(p, words, traj, {NoiseMode::kMean, 0, 0.0, 0});

    // Independent bookkeeping: embeddings per entity, updated with h_t at
    // every mention token; the word at t uses the latest mentioned one.
    Tape tape(false);
    Runner run(tape, p, {NoiseMode::kMean, 0, 0.0, 0});
    DocState st = run.start();
    std::map<std::size_t, Var> emb;
    Var current = st.e_current;
    for (std::size_t t = 0; t < words.size(); ++t) {
      const EntityAnnotation& a = traj[t];
      if (a.r == 1) current = emb.count(a.e) ? emb[a.e] : run.create_entity();
      EXPECT_NEAR(tape.scalar_value(run.dist_x(st.h, current, words[t])), lp.steps[t].log_x, 1e-12) << t;
      run.advance_lstm(st, t, words[t]);
      if (a.r == 1) {
        emb[a.e] = run.update_entity(current, st.h);
        current = emb[a.e];
      }
    }
  }
}

TEST(TotalMass, SumsToOneOverAllTrajectoriesAndWords) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    testing::ToySpec spec;
    spec.vocab = 4;
    spec.max_length = 2;
    spec.scale = 1.0;
    const ModelParams p = testing::toy_params(spec, seed);
    EXPECT_NEAR(eval::total_trajectory_mass(p, 3), 1.0, 1e-10);
  }
}

TEST(Sampling, TrajectoriesReplayThroughStateMachine) {
  const ModelParams p = testing::toy_params({}, 5);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const SampledDocument d = sample_document(p, 15, 2, rng);
    entity::StateMachine sm(p.config.max_mention_length);
    for (const auto& a : d.annotations) ASSERT_NO_THROW(sm.advance(a)) << seed;
    ASSERT_EQ(d.tokens.size(), d.annotations.size());
    EXPECT_TRUE(d.tokens.size() == 15 || d.tokens.back() == 2);
  }
}

TEST(Sampling, SampledLogProbMatchesScoring) {
  const ModelParams p = testing::toy_params({}, 6);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const SampledDocument d = sample_document(p, 10, 2, rng, NoiseMode::kMean);
    EXPECT_NEAR(d.log_prob, doc_log_prob(p, d.tokens, d.annotations, {NoiseMode::kMean}).total, 1e-10);
  }
}

TEST(Sampling, FirstStepMentionRateMatchesDistR) {
  const ModelParams p = testing::toy_params({}, 13);
  Tape tape(false);
  Runner run(tape, p);
  const double p1 = std::exp(tape.value(run.dist_r(run.start().h))[1]);
  Rng rng(99);
  const int n = 50000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += sample_document(p, 1, 2, rng).annotations[0].r;
  EXPECT_NEAR(static_cast<double>(hits) / n, p1, 0.02);
}

TEST(Sampling, SaturatedDistRNeverMentions) {
  testing::ToySpec spec;
  spec.scale = 0.0;
  ModelParams p = testing::toy_params(spec, 0);
  // Constant hidden state: input, candidate and output gates open, forget shut.
  for (std::size_t g : {0u, 2u, 3u}) p.lstm.bias[g].fill(20.0);
  p.lstm.bias[1].fill(-20.0);
  p.h0.fill(std::tanh(1.0));
  for (std::size_t k = 0; k < 4; ++k) p.w_r[k * 4 + k] = 1.0;
  for (std::size_t k = 0; k < 4; ++k) {
    p.r_embed[k] = 50.0;
    p.r_embed[4 + k] = -50.0;
  }
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    for (const auto& a : sample_document(p, 12, 2, rng).annotations) EXPECT_EQ(a.r, 0);
  }
}

TEST(Proposal, SamplesAreValidAndScoredConsistently) {
  Rng rng(4);
  for (bool heads : {true, false}) {
    ModelParams p = testing::toy_params({}, 21);
    p.config.proposal_heads = heads;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto words = testing::random_words(8, 6, rng);
      Tape tape(false);
      Runner run(tape, p, {NoiseMode::kSampled, seed, 0.0, 0});
      Rng draw(seed);
      const ProposalSample s = proposal_sample(run, words, draw);
      EXPECT_TRUE(std::isfinite(s.log_q));
      EXPECT_LE(s.log_q, 0.0);
      entity::StateMachine sm(p.config.max_mention_length);
      for (const auto& a : s.annotations) ASSERT_NO_THROW(sm.advance(a));
      Tape t2(false);
      Runner again(t2, p, {NoiseMode::kSampled, seed, 0.0, 0});
      EXPECT_NEAR(proposal_log_prob(again, words, s.annotations), s.log_q, 1e-12);
    }
  }
}

TEST(Proposal, SharedModeReadsModelHeads) {
  ModelParams p = testing::toy_params({}, 3);
  p.config.proposal_heads = false;
  const auto ann = testing::two_entity_toy();
  const std::vector<std::size_t> words = {0, 1, 2, 3, 4, 5};
  auto logq = [&] {
    Tape t(false);
    Runner run(t, p, {NoiseMode::kMean});
    return proposal_log_prob(run, words, ann);
  };
  const double before = logq();
  p.q_w_entity.fill(3.0);
  EXPECT_EQ(logq(), before);
  p.config.proposal_heads = true;
  EXPECT_NE(logq(), before);
}

TEST(Runner, InvalidCandidateIsALifecycleError) {
  const ModelParams p = testing::toy_params({}, 1);
  Tape tape(false);
  Runner run(tape, p);
  DocState st = run.start();
  EXPECT_THROW(run.dist_e(st, st.h, Var{}), LifecycleError);
  EXPECT_THROW(run.commit(st, men(1, 1), Var{}), LifecycleError);
}

TEST(Checkpoint, RoundTripsExactly) {
  const ModelParams p = testing::toy_params({}, 8);
  std::vector<std::string> words = {"<unk>", "<num>", "<eod>", "a", "b", "c"};
  const corpus::Vocabulary vocab = corpus::Vocabulary::from_words(words, {0, 0, 1, 3, 2, 1});
  const std::string bytes = serialize_checkpoint(p, vocab);
  const Checkpoint back = deserialize_checkpoint(bytes, "mem");
  EXPECT_EQ(serialize_checkpoint(back.params, back.vocab), bytes);
  EXPECT_EQ(back.vocab.words(), words);
  const auto a = p.tensors();
  const auto b = back.params.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(std::equal(a[i].second->data().begin(), a[i].second->data().end(), b[i].second->data().begin()));
  }
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2), "mem"), IngestionError);
  EXPECT_THROW(deserialize_checkpoint("garbage", "mem"), IngestionError);
}

}  // namespace
}  // namespace enlm::model
