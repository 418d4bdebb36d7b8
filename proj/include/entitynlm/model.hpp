#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "entitynlm/entity_state.hpp"
#include "entitynlm/nn.hpp"
#include "entitynlm/rng.hpp"
#include "entitynlm/tape.hpp"
#include "entitynlm/tensor.hpp"

namespace enlm::model {

using entity::EntityAnnotation;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t word_dim = 32;
  std::size_t hidden_dim = 32;
  // 0 means "same as hidden_dim".
  std::size_t entity_dim = 0;
  std::size_t num_classes = 0;
  std::size_t max_mention_length = entity::kDefaultMaxLength;
  double sigma = 0.01;
  // W_e and W_r pinned at zero: the model degenerates to an RNNLM for words.
  bool entity_blind = false;
  // Give the proposal its own R/E/L heads, trained on the gold annotations
  // over the shared LSTM. When false the proposal reuses the model heads.
  bool proposal_heads = true;

  std::size_t effective_entity_dim() const { return entity_dim == 0 ? hidden_dim : entity_dim; }
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ModelParams {
  ModelConfig config;
  Tensor word_embed;  // V x d_x
  nn::LstmCell lstm;
  Tensor h0;          // d_h
  Tensor c0;          // d_h
  Tensor r_embed;     // 2 x d_e; row r is the embedding of R = r
  Tensor w_r;         // d_h x d_e
  Tensor w_entity;    // d_h x d_e
  Tensor w_dist;      // distance-feature width
  Tensor w_length;    // max_mention_length x (d_h + d_e)
  Tensor w_e;         // d_h x d_e
  Tensor w_delta;     // d_h x d_e
  nn::CfsmLayer cfsm;
  // Proposal heads, same shapes as w_r, w_entity, w_dist, w_length.
  Tensor q_w_r;
  Tensor q_w_entity;
  Tensor q_w_dist;
  Tensor q_w_length;

  static ModelParams zeros(const ModelConfig& config, nn::ClassMap classes);
  // Glorot-uniform matrices and r-embeddings, zero biases and initial state.
  static ModelParams initialize(const ModelConfig& config, nn::ClassMap classes, std::uint64_t seed);

  // Throws DimensionError on any shape disagreeing with config.
  void validate() const;
  // Every trainable tensor in a fixed order.
  std::vector<NamedTensor> tensors();
  std::vector<std::pair<std::string, const Tensor*>> tensors() const;
};

struct BoundModel {
  const ModelParams* params = nullptr;
  Var word_embed;
  nn::BoundLstm lstm;
  Var h0, c0, r_embed, w_r, w_entity, w_dist, w_length, w_e, w_delta;
  nn::BoundCfsm cfsm;
  Var q_w_r, q_w_entity, q_w_dist, q_w_length;
  // Same order as ModelParams::tensors().
  std::vector<Var> all;
};

BoundModel bind(Tape& tape, const ModelParams& params);

// How new-entity candidates are drawn. kMean uses normalize(r_1) with no
// noise, which makes the joint probability a deterministic function of the
// annotations (used by exact-enumeration oracles).
enum class NoiseMode { kSampled, kMean };

struct RunOptions {
  NoiseMode noise = NoiseMode::kSampled;
  std::uint64_t noise_seed = 0;
  // Training only: applied to the LSTM input and to h in the word predictor.
  double dropout = 0.0;
  std::uint64_t dropout_seed = 0;
};

// Neural side of a document in progress.
struct DocState {
  entity::StateMachine machine;
  Var h;
  Var c;
  std::vector<Var> entities;  // embedding of entity e at index e - 1
  Var e_current;
};

// Which R/E/L heads a distribution reads.
enum class Head { kModel, kProposal };

// Per-document primitives over one tape. Owns the noise and dropout streams.
class Runner {
 public:
  Runner(Tape& tape, const ModelParams& params, RunOptions options = {});

  Tape& tape() { return tape_; }
  const BoundModel& bound() const { return bound_; }
  const ModelParams& params() const { return *bound_.params; }
  const RunOptions& options() const { return options_; }

  DocState start();
  // Restart the new-entity noise stream.
  void reseed_noise(std::uint64_t seed) { noise_rng_.seed(seed); }

  // log p(R | h): two values.
  Var dist_r(Var h, Head head = Head::kModel);
  // log p(E | h) over 1..K+1. `candidate` is the new-entity embedding.
  Var dist_e(const DocState& state, Var h, Var candidate, Head head = Head::kModel);
  // log p(L | h, e): max_mention_length values, index l - 1.
  Var dist_l(Var h, Var e_embed, Head head = Head::kModel);
  // log p(x | h, e_current) for one word.
  Var dist_x(Var h, Var e_current, std::size_t word);
  // Every word's log-probability, indexed by id. Values only.
  std::vector<double> dist_x_all(Var h, Var e_current);
  std::size_t sample_x(Var h, Var e_current, Rng& rng);

  Var create_entity();
  Var update_entity(Var e_old, Var h_t);

  // Advance the LSTM over x_t (0-based). Reuses precomputed hidden states
  // when available.
  void advance_lstm(DocState& state, std::size_t t, std::size_t word);
  // Dropout on h before the word predictor (identity outside training).
  Var word_context(Var h);

  // Apply an annotation after x_t has been read: register a new entity,
  // update the mentioned one with h_t and move e_current.
  void commit(DocState& state, const EntityAnnotation& a, Var candidate);

  // Precompute h_1..h_T for an observed word sequence (no dropout). Entry t
  // is the state after reading t tokens; entry 0 is the initial state.
  void precompute_hidden(std::span<const std::size_t> tokens);
  void clear_hidden() { hidden_.clear(); cell_.clear(); }

 private:
  Tape& tape_;
  BoundModel bound_;
  RunOptions options_;
  Rng noise_rng_;
  Rng dropout_rng_;
  struct Heads {
    Var w_r, w_entity, w_dist, w_length;
  };
  Heads heads(Head head) const;

  Var r1_normalized_;
  std::vector<Var> hidden_;
  std::vector<Var> cell_;
};

struct StepDecision {
  EntityAnnotation annotation;
  std::size_t word = 0;
  bool choice_point = false;
  double log_r = 0.0;
  double log_e = 0.0;
  double log_l = 0.0;
  double log_x = 0.0;
  // argmax of p(E) at this step, when E was scored (ties go to the lowest index).
  std::size_t e_argmax = 0;

  double total() const { return log_r + log_e + log_l + log_x; }
};

struct DocScore {
  Var total;
  std::vector<StepDecision> steps;
};

// Teacher-forced joint log-probability on an existing tape.
DocScore score_document(Runner& runner, std::span<const std::size_t> tokens,
                        std::span<const EntityAnnotation> annotations);

struct DocLogProb {
  double total = 0.0;
  std::vector<StepDecision> steps;
};

DocLogProb doc_log_prob(const ModelParams& params, std::span<const std::size_t> tokens,
                        std::span<const EntityAnnotation> annotations, RunOptions options = {});

struct SampledDocument {
  std::vector<std::size_t> tokens;
  std::vector<EntityAnnotation> annotations;
  double log_prob = 0.0;
};

// Ancestral sampling. Stops after emitting `end_token` or after max_len tokens.
SampledDocument sample_document(const ModelParams& params, std::size_t max_len, std::size_t end_token,
                                Rng& rng, NoiseMode noise = NoiseMode::kSampled);

struct ProposalSample {
  std::vector<EntityAnnotation> annotations;
  double log_q = 0.0;
};

// Discriminative proposal: read x_t first, then choose (R, E, L) from h_t.
ProposalSample proposal_sample(Runner& runner, std::span<const std::size_t> tokens, Rng& rng);
// log Q of a given trajectory; consumes the noise stream exactly like sampling.
double proposal_log_prob(Runner& runner, std::span<const std::size_t> tokens,
                         std::span<const EntityAnnotation> annotations);
// Same as proposal_log_prob, as a differentiable node on the runner's tape.
Var proposal_score(Runner& runner, std::span<const std::size_t> tokens,
                   std::span<const EntityAnnotation> annotations);

// Word log-probabilities of the plain LSTM + CFSM language model with the
// same parameters (no entity term). Reference for the ablation property.
std::vector<double> rnnlm_word_log_probs(const ModelParams& params, std::span<const std::size_t> tokens);

}  // namespace enlm::model
