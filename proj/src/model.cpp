#include "entitynlm/model.hpp"

#include <algorithm>
#include <cmath>

#include "entitynlm/error.hpp"

namespace enlm::model {

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void expect_shape(const Tensor& t, const Shape& want, const char* name) {
  if (t.shape() != want) {
    throw DimensionError(std::string("model: ") + name + " has shape " + shape_string(t.shape()) +
                         ", expected " + shape_string(want));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("model: empty vocabulary");
  if (word_dim == 0 || hidden_dim == 0) throw ConfigError("model: dimensions must be positive");
  if (effective_entity_dim() != hidden_dim) {
    throw ConfigError("model: entity_dim " + std::to_string(entity_dim) +
                      " must equal hidden_dim " + std::to_string(hidden_dim) +
                      " (entity updates mix in the hidden state)");
  }
  if (max_mention_length < 1) throw ConfigError("model: max_mention_length must be >= 1");
  if (num_classes < 1 || num_classes > vocab_size) {
    throw ConfigError("model: num_classes " + std::to_string(num_classes) + " outside [1, " +
                      std::to_string(vocab_size) + "]");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("model: sigma must be finite and >= 0");
}

ModelParams ModelParams::zeros(const ModelConfig& config, nn::ClassMap classes) {
  config.validate();
  if (classes.num_words() != config.vocab_size || classes.num_classes() != config.num_classes) {
    throw ConfigError("model: class map covers " + std::to_string(classes.num_words()) + " words in " +
                      std::to_string(classes.num_classes()) + " classes, config says " +
                      std::to_string(config.vocab_size) + " / " + std::to_string(config.num_classes));
  }
  const std::size_t dh = config.hidden_dim;
  const std::size_t de = config.effective_entity_dim();
  ModelParams p;
  p.config = config;
  p.word_embed = Tensor({config.vocab_size, config.word_dim});
  p.lstm = nn::LstmCell::zeros(config.word_dim, dh);
  p.h0 = Tensor({dh});
  p.c0 = Tensor({dh});
  p.r_embed = Tensor({2, de});
  p.w_r = Tensor({dh, de});
  p.w_entity = Tensor({dh, de});
  p.w_dist = Tensor({entity::kDistanceFeatures});
  p.w_length = Tensor({config.max_mention_length, dh + de});
  p.w_e = Tensor({dh, de});
  p.w_delta = Tensor({dh, de});
  p.cfsm = nn::CfsmLayer::zeros(std::move(classes), dh);
  p.q_w_r = Tensor({dh, de});
  p.q_w_entity = Tensor({dh, de});
  p.q_w_dist = Tensor({entity::kDistanceFeatures});
  p.q_w_length = Tensor({config.max_mention_length, dh + de});
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, nn::ClassMap classes, std::uint64_t seed) {
  ModelParams p = zeros(config, std::move(classes));
  nn::GlorotInit init(seed);
  init.fill(p.word_embed);
  for (std::size_t g = 0; g < nn::LstmCell::kGates; ++g) {
    init.fill(p.lstm.w_input[g]);
    init.fill(p.lstm.w_hidden[g]);
  }
  init.fill(p.r_embed);
  init.fill(p.w_r);
  init.fill(p.w_entity);
  init.fill(p.w_length);
  init.fill(p.w_e);
  init.fill(p.w_delta);
  init.fill(p.cfsm.class_weights);
  init.fill(p.cfsm.word_weights);
  init.fill(p.q_w_r);
  init.fill(p.q_w_entity);
  init.fill(p.q_w_length);
  if (config.entity_blind) {
    p.w_e.fill(0.0);
    p.w_r.fill(0.0);
  }
  return p;
}

void ModelParams::validate() const {
  config.validate();
  const std::size_t dh = config.hidden_dim;
  const std::size_t de = config.effective_entity_dim();
  expect_shape(word_embed, {config.vocab_size, config.word_dim}, "word_embed");
  if (lstm.input_dim != config.word_dim || lstm.hidden_dim != dh) {
    throw DimensionError("model: lstm is " + std::to_string(lstm.input_dim) + " -> " +
                         std::to_string(lstm.hidden_dim) + ", expected " + std::to_string(config.word_dim) +
                         " -> " + std::to_string(dh));
  }
  lstm.validate();
  expect_shape(h0, {dh}, "h0");
  expect_shape(c0, {dh}, "c0");
  expect_shape(r_embed, {2, de}, "r_embed");
  expect_shape(w_r, {dh, de}, "w_r");
  expect_shape(w_entity, {dh, de}, "w_entity");
  expect_shape(w_dist, {entity::kDistanceFeatures}, "w_dist");
  expect_shape(w_length, {config.max_mention_length, dh + de}, "w_length");
  expect_shape(w_e, {dh, de}, "w_e");
  expect_shape(w_delta, {dh, de}, "w_delta");
  expect_shape(q_w_r, {dh, de}, "q.w_r");
  expect_shape(q_w_entity, {dh, de}, "q.w_entity");
  expect_shape(q_w_dist, {entity::kDistanceFeatures}, "q.w_dist");
  expect_shape(q_w_length, {config.max_mention_length, dh + de}, "q.w_length");
  cfsm.validate();
  if (cfsm.classes.num_words() != config.vocab_size || cfsm.input_dim() != dh) {
    throw DimensionError("model: cfsm covers " + std::to_string(cfsm.classes.num_words()) +
                         " words with input " + std::to_string(cfsm.input_dim()));
  }
}

std::vector<NamedTensor> ModelParams::tensors() {
  std::vector<NamedTensor> out;
  out.push_back({"word_embed", &word_embed});
  for (std::size_t g = 0; g < nn::LstmCell::kGates; ++g) {
    const std::string k = std::to_string(g);
    out.push_back({"lstm.w_input." + k, &lstm.w_input[g]});
    out.push_back({"lstm.w_hidden." + k, &lstm.w_hidden[g]});
    out.push_back({"lstm.bias." + k, &lstm.bias[g]});
  }
  out.push_back({"h0", &h0});
  out.push_back({"c0", &c0});
  out.push_back({"r_embed", &r_embed});
  out.push_back({"w_r", &w_r});
  out.push_back({"w_entity", &w_entity});
  out.push_back({"w_dist", &w_dist});
  out.push_back({"w_length", &w_length});
  out.push_back({"w_e", &w_e});
  out.push_back({"w_delta", &w_delta});
  out.push_back({"cfsm.class_weights", &cfsm.class_weights});
  out.push_back({"cfsm.class_bias", &cfsm.class_bias});
  out.push_back({"cfsm.word_weights", &cfsm.word_weights});
  out.push_back({"cfsm.word_bias", &cfsm.word_bias});
  out.push_back({"q.w_r", &q_w_r});
  out.push_back({"q.w_entity", &q_w_entity});
  out.push_back({"q.w_dist", &q_w_dist});
  out.push_back({"q.w_length", &q_w_length});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const NamedTensor& n : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(n.name, n.tensor);
  return out;
}

BoundModel bind(Tape& tape, const ModelParams& params) {
  BoundModel b;
  b.params = &params;
  b.word_embed = tape.param(params.word_embed);
  b.lstm = nn::bind(tape, params.lstm);
  b.h0 = tape.param(params.h0);
  b.c0 = tape.param(params.c0);
  b.r_embed = tape.param(params.r_embed);
  b.w_r = tape.param(params.w_r);
  b.w_entity = tape.param(params.w_entity);
  b.w_dist = tape.param(params.w_dist);
  b.w_length = tape.param(params.w_length);
  b.w_e = tape.param(params.w_e);
  b.w_delta = tape.param(params.w_delta);
  b.cfsm = nn::bind(tape, params.cfsm);
  b.q_w_r = tape.param(params.q_w_r);
  b.q_w_entity = tape.param(params.q_w_entity);
  b.q_w_dist = tape.param(params.q_w_dist);
  b.q_w_length = tape.param(params.q_w_length);
  b.all.push_back(b.word_embed);
  for (std::size_t g = 0; g < nn::LstmCell::kGates; ++g) {
    b.all.push_back(b.lstm.w_input[g]);
    b.all.push_back(b.lstm.w_hidden[g]);
    b.all.push_back(b.lstm.bias[g]);
  }
  for (Var v : {b.h0, b.c0, b.r_embed, b.w_r, b.w_entity, b.w_dist, b.w_length, b.w_e, b.w_delta,
                b.cfsm.class_weights, b.cfsm.class_bias, b.cfsm.word_weights, b.cfsm.word_bias, b.q_w_r,
                b.q_w_entity, b.q_w_dist, b.q_w_length}) {
    b.all.push_back(v);
  }
  return b;
}

Runner::Runner(Tape& tape, const ModelParams& params, RunOptions options)
    : tape_(tape), options_(options), noise_rng_(options.noise_seed), dropout_rng_(options.dropout_seed) {
  params.validate();
  if (options_.dropout < 0.0 || options_.dropout >= 1.0) {
    throw ConfigError("model: dropout " + std::to_string(options_.dropout) + " outside [0, 1)");
  }
  bound_ = bind(tape_, params);
  r1_normalized_ = tape_.l2_normalize(tape_.lookup(bound_.r_embed, 1));
}

DocState Runner::start() {
  DocState s{entity::StateMachine(params().config.max_mention_length), bound_.h0, bound_.c0, {},
             r1_normalized_};
  return s;
}

Runner::Heads Runner::heads(Head head) const {
  if (head == Head::kProposal && params().config.proposal_heads) {
    return {bound_.q_w_r, bound_.q_w_entity, bound_.q_w_dist, bound_.q_w_length};
  }
  return {bound_.w_r, bound_.w_entity, bound_.w_dist, bound_.w_length};
}

Var Runner::dist_r(Var h, Head head) {
  const Var w = heads(head).w_r;
  const Var s0 = tape_.bilinear(h, w, tape_.lookup(bound_.r_embed, 0));
  const Var s1 = tape_.bilinear(h, w, tape_.lookup(bound_.r_embed, 1));
  const Var scores[] = {s0, s1};
  return tape_.log_softmax(tape_.stack(scores));
}

Var Runner::dist_e(const DocState& state, Var h, Var candidate, Head head) {
  const Heads w = heads(head);
  const entity::EntityRegistry& reg = state.machine.registry();
  if (!candidate.valid()) {
    throw LifecycleError("dist_e: no embedding for the new-entity candidate at position " +
                         std::to_string(state.machine.position()));
  }
  if (state.entities.size() != reg.size()) {
    throw LifecycleError("dist_e: " + std::to_string(state.entities.size()) + " embeddings for " +
                         std::to_string(reg.size()) + " registered entities");
  }
  const std::size_t t = state.machine.position();
  std::vector<Var> scores;
  scores.reserve(reg.size() + 1);
  for (std::size_t e = 1; e <= reg.size(); ++e) {
    const Var base = tape_.bilinear(h, w.w_entity, state.entities[e - 1]);
    const std::size_t bucket = entity::distance_bucket(t - reg.last_mention(e));
    scores.push_back(tape_.add(base, tape_.pick(w.w_dist, bucket)));
  }
  scores.push_back(tape_.bilinear(h, w.w_entity, candidate));
  return tape_.log_softmax(tape_.stack(scores));
}

Var Runner::dist_l(Var h, Var e_embed, Head head) {
  const std::size_t lmax = params().config.max_mention_length;
  return tape_.log_softmax(tape_.linear(heads(head).w_length, Var{}, tape_.concat(h, e_embed), 0, lmax));
}

Var Runner::dist_x(Var h, Var e_current, std::size_t word) {
  const Var rep = tape_.add(h, tape_.matvec(bound_.w_e, e_current));
  return nn::cfsm_log_prob(tape_, bound_.cfsm, rep, word);
}

std::vector<double> Runner::dist_x_all(Var h, Var e_current) {
  const std::size_t mark = tape_.size();
  const Var rep = tape_.add(h, tape_.matvec(bound_.w_e, e_current));
  auto out = nn::cfsm_log_probs(tape_, bound_.cfsm, rep);
  tape_.truncate(mark);
  return out;
}

std::size_t Runner::sample_x(Var h, Var e_current, Rng& rng) {
  const std::size_t mark = tape_.size();
  const Var rep = tape_.add(h, tape_.matvec(bound_.w_e, e_current));
  const std::size_t w = nn::cfsm_sample(tape_, bound_.cfsm, rep, rng);
  tape_.truncate(mark);
  return w;
}

Var Runner::create_entity() {
  const double sigma = params().config.sigma;
  if (options_.noise == NoiseMode::kMean || sigma == 0.0) return r1_normalized_;
  const std::size_t de = params().config.effective_entity_dim();
  std::vector<double> z(de);
  for (double& v : z) v = sigma * standard_normal(noise_rng_);
  return tape_.l2_normalize(tape_.add(tape_.lookup(bound_.r_embed, 1), tape_.constant(z)));
}

Var Runner::update_entity(Var e_old, Var h_t) {
  const Var delta = tape_.sigmoid(tape_.bilinear(h_t, bound_.w_delta, e_old));
  const Var keep = tape_.scale(e_old, delta);
  const Var mix = tape_.scale(h_t, tape_.affine(delta, -1.0, 1.0));
  return tape_.l2_normalize(tape_.add(keep, mix));
}

void Runner::advance_lstm(DocState& state, std::size_t t, std::size_t word) {
  if (word >= params().config.vocab_size) {
    throw VocabularyError("model: word id " + std::to_string(word) + " outside vocabulary of " +
                          std::to_string(params().config.vocab_size));
  }
  if (!hidden_.empty()) {
    if (t + 1 >= hidden_.size()) throw ContractError("model: token " + std::to_string(t) + " beyond precomputed states");
    state.h = hidden_[t + 1];
    state.c = cell_[t + 1];
    return;
  }
  Var x = tape_.lookup(bound_.word_embed, word);
  x = nn::dropout(tape_, x, options_.dropout, dropout_rng_);
  const nn::LstmOutput out = nn::lstm_step(tape_, bound_.lstm, state.h, state.c, x);
  state.h = out.h;
  state.c = out.c;
}

Var Runner::word_context(Var h) { return nn::dropout(tape_, h, options_.dropout, dropout_rng_); }

void Runner::commit(DocState& state, const EntityAnnotation& a, Var candidate) {
  state.machine.check(a);
  if (a.r == 1) {
    const std::size_t k = state.machine.registry().size();
    if (a.e == k + 1) {
      if (!candidate.valid()) throw LifecycleError("commit: new entity without a candidate embedding");
      state.entities.push_back(candidate);
    }
    if (a.e > state.entities.size()) {
      throw LifecycleError("update_entity: entity " + std::to_string(a.e) + " not in registry");
    }
    Var& emb = state.entities[a.e - 1];
    emb = update_entity(emb, state.h);
    state.e_current = emb;
  }
  state.machine.advance(a);
}

void Runner::precompute_hidden(std::span<const std::size_t> tokens) {
  if (options_.dropout > 0.0) throw ConfigError("model: precomputed states are only valid without dropout");
  hidden_.clear();
  cell_.clear();
  std::vector<Var> hidden;
  std::vector<Var> cell;
  DocState s = start();
  hidden.push_back(s.h);
  cell.push_back(s.c);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    advance_lstm(s, t, tokens[t]);
    hidden.push_back(s.h);
    cell.push_back(s.c);
  }
  hidden_ = std::move(hidden);
  cell_ = std::move(cell);
}

DocScore score_document(Runner& run, std::span<const std::size_t> tokens,
                        std::span<const EntityAnnotation> annotations) {
  if (tokens.size() != annotations.size()) {
    throw ContractError("doc_log_prob: " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(annotations.size()) + " annotations");
  }
  Tape& tape = run.tape();
  DocState st = run.start();
  DocScore out;
  out.steps.reserve(tokens.size());
  std::vector<Var> terms;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const EntityAnnotation& a = annotations[t];
    st.machine.check(a);
    StepDecision d;
    d.annotation = a;
    d.word = tokens[t];
    d.choice_point = st.machine.at_choice_point();
    const Var h = st.h;
    Var candidate;
    if (d.choice_point) {
      const Var pr = tape.pick(run.dist_r(h), static_cast<std::size_t>(a.r));
      terms.push_back(pr);
      d.log_r = tape.scalar_value(pr);
      if (a.r == 1) {
        candidate = run.create_entity();
        const Var le = run.dist_e(st, h, candidate);
        d.e_argmax = argmax(tape.value(le)) + 1;
        const Var pe = tape.pick(le, a.e - 1);
        terms.push_back(pe);
        d.log_e = tape.scalar_value(pe);
        const Var selected = a.e == st.entities.size() + 1 ? candidate : st.entities[a.e - 1];
        st.e_current = selected;
        const Var pl = tape.pick(run.dist_l(h, selected), a.l - 1);
        terms.push_back(pl);
        d.log_l = tape.scalar_value(pl);
      }
    }
    const Var px = run.dist_x(run.word_context(h), st.e_current, tokens[t]);
    terms.push_back(px);
    d.log_x = tape.scalar_value(px);
    run.advance_lstm(st, t, tokens[t]);
    run.commit(st, a, candidate);
    out.steps.push_back(d);
  }
  out.total = terms.empty() ? tape.scalar(0.0) : tape.sum(terms);
  return out;
}

DocLogProb doc_log_prob(const ModelParams& params, std::span<const std::size_t> tokens,
                        std::span<const EntityAnnotation> annotations, RunOptions options) {
  Tape tape(false);
  Runner run(tape, params, options);
  DocScore s = score_document(run, tokens, annotations);
  return {tape.scalar_value(s.total), std::move(s.steps)};
}

SampledDocument sample_document(const ModelParams& params, std::size_t max_len, std::size_t end_token,
                                Rng& rng, NoiseMode noise) {
  if (max_len < 1) throw ContractError("sample_document: max_len must be >= 1");
  Tape tape(false);
  Runner run(tape, params, {noise, rng(), 0.0, 0});
  DocState st = run.start();
  SampledDocument out;
  for (std::size_t t = 0; t < max_len; ++t) {
    const Var h = st.h;
    EntityAnnotation a;
    Var candidate;
    if (st.machine.at_choice_point()) {
      const Var lr = run.dist_r(h);
      a.r = static_cast<int>(sample_log_categorical(tape.value(lr), rng));
      out.log_prob += tape.value(lr)[a.r];
      if (a.r == 1) {
        candidate = run.create_entity();
        const Var le = run.dist_e(st, h, candidate);
        a.e = sample_log_categorical(tape.value(le), rng) + 1;
        out.log_prob += tape.value(le)[a.e - 1];
        const Var selected = a.e == st.entities.size() + 1 ? candidate : st.entities[a.e - 1];
        st.e_current = selected;
        const Var ll = run.dist_l(h, selected);
        a.l = sample_log_categorical(tape.value(ll), rng) + 1;
        out.log_prob += tape.value(ll)[a.l - 1];
      }
    } else {
      a = st.machine.forced_continuation();
    }
    const std::size_t x = run.sample_x(h, st.e_current, rng);
    out.log_prob += tape.scalar_value(run.dist_x(h, st.e_current, x));
    run.advance_lstm(st, t, x);
    run.commit(st, a, candidate);
    out.tokens.push_back(x);
    out.annotations.push_back(a);
    if (x == end_token) break;
  }
  return out;
}

namespace {

// Shared walk for sampling from Q and scoring a given trajectory under Q.
ProposalSample run_proposal(Runner& run, std::span<const std::size_t> tokens, Rng* rng,
                            std::span<const EntityAnnotation> given, std::vector<Var>* terms = nullptr) {
  Tape& tape = run.tape();
  DocState st = run.start();
  ProposalSample out;
  out.annotations.reserve(tokens.size());
  auto choose = [&](Var lp, std::size_t gold) {
    const auto v = tape.value(lp);
    const std::size_t k = rng ? sample_log_categorical(v, *rng) : gold;
    if (k >= v.size()) throw ContractError("proposal: choice " + std::to_string(k) + " out of range");
    out.log_q += v[k];
    if (terms) terms->push_back(tape.pick(lp, k));
    return k;
  };
  constexpr Head q = Head::kProposal;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    run.advance_lstm(st, t, tokens[t]);
    const Var h = st.h;
    EntityAnnotation a = rng ? EntityAnnotation{} : given[t];
    if (!rng) st.machine.check(a);
    Var candidate;
    if (st.machine.at_choice_point()) {
      a.r = static_cast<int>(choose(run.dist_r(h, q), static_cast<std::size_t>(a.r)));
      if (a.r == 1) {
        candidate = run.create_entity();
        a.e = choose(run.dist_e(st, h, candidate, q), a.e - 1) + 1;
        const Var selected = a.e == st.entities.size() + 1 ? candidate : st.entities[a.e - 1];
        a.l = choose(run.dist_l(h, selected, q), a.l - 1) + 1;
      } else {
        a.e = entity::kNoEntity;
        a.l = 1;
      }
    } else {
      a = st.machine.forced_continuation();
    }
    run.commit(st, a, candidate);
    out.annotations.push_back(a);
  }
  return out;
}

}  // namespace

ProposalSample proposal_sample(Runner& run, std::span<const std::size_t> tokens, Rng& rng) {
  return run_proposal(run, tokens, &rng, {});
}

double proposal_log_prob(Runner& run, std::span<const std::size_t> tokens,
                         std::span<const EntityAnnotation> annotations) {
  if (tokens.size() != annotations.size()) {
    throw ContractError("proposal: " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(annotations.size()) + " annotations");
  }
  return run_proposal(run, tokens, nullptr, annotations).log_q;
}

Var proposal_score(Runner& run, std::span<const std::size_t> tokens,
                   std::span<const EntityAnnotation> annotations) {
  if (tokens.size() != annotations.size()) {
    throw ContractError("proposal: " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(annotations.size()) + " annotations");
  }
  std::vector<Var> terms;
  run_proposal(run, tokens, nullptr, annotations, &terms);
  return terms.empty() ? run.tape().scalar(0.0) : run.tape().sum(terms);
}

std::vector<double> rnnlm_word_log_probs(const ModelParams& params, std::span<const std::size_t> tokens) {
  params.validate();
  Tape tape(false);
  const Var embed = tape.param(params.word_embed);
  const nn::BoundLstm lstm = nn::bind(tape, params.lstm);
  const nn::BoundCfsm cfsm = nn::bind(tape, params.cfsm);
  Var h = tape.param(params.h0);
  Var c = tape.param(params.c0);
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t x : tokens) {
    out.push_back(tape.scalar_value(nn::cfsm_log_prob(tape, cfsm, h, x)));
    const nn::LstmOutput next = nn::lstm_step(tape, lstm, h, c, tape.lookup(embed, x));
    h = next.h;
    c = next.c;
  }
  return out;
}

}  // namespace enlm::model
