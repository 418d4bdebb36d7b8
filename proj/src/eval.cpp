#include "entitynlm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <thread>

#include "entitynlm/error.hpp"
#include "entitynlm/rng.hpp"

namespace enlm::eval {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

double log_mean_exp(std::span<const double> log_weights) {
  if (log_weights.empty()) throw ContractError("log_mean_exp: no weights");
  const double lse = log_sum_exp(log_weights);
  if (lse == kNegInf) throw NumericalError("log_mean_exp: every weight is zero");
  if (!std::isfinite(lse)) throw NumericalError("log_mean_exp: non-finite weights");
  return lse - std::log(static_cast<double>(log_weights.size()));
}

double effective_sample_size(std::span<const double> log_weights) {
  const double a = log_sum_exp(log_weights);
  std::vector<double> doubled(log_weights.begin(), log_weights.end());
  for (double& v : doubled) v *= 2.0;
  const double b = log_sum_exp(doubled);
  if (a == kNegInf) return 0.0;
  return std::exp(2.0 * a - b);
}

ImportanceEstimate importance_estimate(const model::ModelParams& params, std::span<const std::size_t> tokens,
                                       std::size_t samples, std::uint64_t seed, model::NoiseMode noise,
                                       const std::string& doc_id) {
  if (samples < 1) throw ConfigError("importance sampling: need at least one sample");
  Tape tape(false);
  model::Runner run(tape, params, {noise, 0, 0.0, 0});
  run.precompute_hidden(tokens);
  const std::size_t mark = tape.size();
  Rng rng(derive_seed(seed, 0));
  ImportanceEstimate est;
  est.samples = samples;
  est.log_weights.reserve(samples);
  for (std::size_t n = 0; n < samples; ++n) {
    const std::uint64_t noise_seed = derive_seed(seed, 1, n);
    run.reseed_noise(noise_seed);
    const model::ProposalSample q = model::proposal_sample(run, tokens, rng);
    tape.truncate(mark);
    run.reseed_noise(noise_seed);
    const model::DocScore p = model::score_document(run, tokens, q.annotations);
    est.log_weights.push_back(tape.scalar_value(p.total) - q.log_q);
    tape.truncate(mark);
  }
  try {
    est.log_marginal = log_mean_exp(est.log_weights);
  } catch (const NumericalError& e) {
    throw NumericalError("importance sampling: document '" + doc_id + "': " + e.what());
  }
  est.ess = effective_sample_size(est.log_weights);
  return est;
}

PerplexityReport perplexity_is(const model::ModelParams& params, const std::vector<corpus::EncodedDocument>& docs,
                               std::size_t samples, std::uint64_t seed, model::NoiseMode noise,
                               std::size_t workers) {
  if (docs.empty()) throw ConfigError("perplexity: empty document set");
  PerplexityReport rep;
  rep.samples = samples;
  rep.doc_log_probs.assign(docs.size(), 0.0);
  rep.doc_ess.assign(docs.size(), 0.0);
  auto work = [&](std::size_t i) {
    const ImportanceEstimate est =
        importance_estimate(params, docs[i].tokens, samples, derive_seed(seed, i), noise, docs[i].id);
    rep.doc_log_probs[i] = est.log_marginal;
    rep.doc_ess[i] = est.ess;
  };
  workers = std::max<std::size_t>(1, std::min(workers, docs.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < docs.size(); ++i) work(i);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < docs.size(); i += workers) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    rep.total_log_prob += rep.doc_log_probs[i];
    rep.tokens += docs[i].tokens.size();
  }
  if (rep.tokens == 0) throw ConfigError("perplexity: documents contain no tokens");
  rep.perplexity = std::exp2(-(rep.total_log_prob / std::log(2.0)) / static_cast<double>(rep.tokens));
  return rep;
}

PerplexityReport perplexity_exact_blind(const model::ModelParams& params,
                                        const std::vector<corpus::EncodedDocument>& docs) {
  for (double v : params.w_e.data()) {
    if (v != 0.0) throw ContractError("perplexity: exact evaluation needs W_e = 0");
  }
  PerplexityReport rep;
  for (const corpus::EncodedDocument& d : docs) {
    double lp = 0.0;
    for (double v : model::rnnlm_word_log_probs(params, d.tokens)) lp += v;
    rep.doc_log_probs.push_back(lp);
    rep.total_log_prob += lp;
    rep.tokens += d.tokens.size();
  }
  if (rep.tokens == 0) throw ContractError("perplexity: no tokens");
  rep.perplexity = std::exp2(-(rep.total_log_prob / std::log(2.0)) / static_cast<double>(rep.tokens));
  return rep;
}

namespace {

// Depth-first walk over (R, E, L) and optionally X. Log-probabilities of
// completed paths are appended to `out`.
class Enumerator {
 public:
  Enumerator(model::Runner& run, std::span<const std::size_t> tokens, std::size_t length)
      : run_(run), tape_(run.tape()), tokens_(tokens), length_(length) {}

  void walk(const model::DocState& st, std::size_t t, double acc, std::vector<double>& out) {
    if (t == length_) {
      out.push_back(acc);
      return;
    }
    const std::size_t mark = tape_.size();
    const Var h = st.h;
    if (!st.machine.at_choice_point()) {
      emit(st, t, st.machine.forced_continuation(), Var{}, st.e_current, acc, out);
      tape_.truncate(mark);
      return;
    }
    const auto lr = copy(run_.dist_r(h));
    emit(st, t, entity::EntityAnnotation::outside(), Var{}, st.e_current, acc + lr[0], out);
    const Var candidate = run_.create_entity();
    const auto le = copy(run_.dist_e(st, h, candidate));
    for (std::size_t e = 1; e <= le.size(); ++e) {
      const Var selected = e == le.size() ? candidate : st.entities[e - 1];
      const std::size_t inner = tape_.size();
      const auto ll = copy(run_.dist_l(h, selected));
      for (std::size_t l = 1; l <= ll.size(); ++l) {
        emit(st, t, entity::EntityAnnotation::mention(e, l), candidate, selected,
             acc + lr[1] + le[e - 1] + ll[l - 1], out);
      }
      tape_.truncate(inner);
    }
    tape_.truncate(mark);
  }

 private:
  std::vector<double> copy(Var v) {
    const auto s = tape_.value(v);
    return {s.begin(), s.end()};
  }

  void emit(const model::DocState& st, std::size_t t, const entity::EntityAnnotation& a, Var candidate,
            Var e_current, double acc, std::vector<double>& out) {
    const std::size_t mark = tape_.size();
    if (!tokens_.empty()) {
      follow(st, t, a, candidate, e_current, tokens_[t], acc + tape_.scalar_value(run_.dist_x(st.h, e_current, tokens_[t])), out);
    } else {
      const auto lx = run_.dist_x_all(st.h, e_current);
      for (std::size_t x = 0; x < lx.size(); ++x) follow(st, t, a, candidate, e_current, x, acc + lx[x], out);
    }
    tape_.truncate(mark);
  }

  void follow(const model::DocState& st, std::size_t t, const entity::EntityAnnotation& a, Var candidate,
              Var e_current, std::size_t word, double acc, std::vector<double>& out) {
    const std::size_t mark = tape_.size();
    model::DocState next = st;
    next.e_current = e_current;
    run_.advance_lstm(next, t, word);
    run_.commit(next, a, candidate);
    walk(next, t + 1, acc, out);
    tape_.truncate(mark);
  }

  model::Runner& run_;
  Tape& tape_;
  std::span<const std::size_t> tokens_;
  std::size_t length_;
};

void check_guard(const model::ModelParams& params, std::size_t length) {
  if (length > kMaxEnumerationLength || params.config.max_mention_length > kMaxEnumerationMentionLength) {
    throw ContractError("enumeration guard: length " + std::to_string(length) + " (max " +
                        std::to_string(kMaxEnumerationLength) + "), max mention length " +
                        std::to_string(params.config.max_mention_length) + " (max " +
                        std::to_string(kMaxEnumerationMentionLength) + ")");
  }
}

}  // namespace

double exact_marginal(const model::ModelParams& params, std::span<const std::size_t> tokens) {
  check_guard(params, tokens.size());
  if (tokens.empty()) return 0.0;
  Tape tape(false);
  model::Runner run(tape, params, {model::NoiseMode::kMean, 0, 0.0, 0});
  run.precompute_hidden(tokens);
  Enumerator en(run, tokens, tokens.size());
  std::vector<double> paths;
  en.walk(run.start(), 0, 0.0, paths);
  return log_sum_exp(paths);
}

double total_trajectory_mass(const model::ModelParams& params, std::size_t length) {
  check_guard(params, length);
  Tape tape(false);
  model::Runner run(tape, params, {model::NoiseMode::kMean, 0, 0.0, 0});
  Enumerator en(run, {}, length);
  std::vector<double> paths;
  en.walk(run.start(), 0, 0.0, paths);
  double mass = 0.0;
  for (double lp : paths) mass += std::exp(lp);
  return mass;
}

std::vector<std::vector<entity::EntityAnnotation>> enumerate_trajectories(std::size_t length,
                                                                          std::size_t max_length) {
  std::vector<std::vector<entity::EntityAnnotation>> out;
  std::vector<entity::EntityAnnotation> path;
  auto rec = [&](auto&& self, const entity::StateMachine& sm) -> void {
    if (path.size() == length) {
      out.push_back(path);
      return;
    }
    std::vector<entity::EntityAnnotation> options;
    if (!sm.at_choice_point()) {
      options.push_back(sm.forced_continuation());
    } else {
      options.push_back(entity::EntityAnnotation::outside());
      for (std::size_t e : sm.admissible_entities()) {
        for (std::size_t l = 1; l <= max_length; ++l) options.push_back(entity::EntityAnnotation::mention(e, l));
      }
    }
    for (const auto& a : options) {
      entity::StateMachine next = sm;
      next.advance(a);
      path.push_back(a);
      self(self, next);
      path.pop_back();
    }
  };
  rec(rec, entity::StateMachine(max_length));
  return out;
}

PredictionResult entity_prediction(const model::ModelParams& params, const std::vector<corpus::EncodedDocument>& docs,
                                   const PredictionProtocol& protocol) {
  PredictionResult res;
  for (const corpus::EncodedDocument& d : docs) {
    if (d.sentence_starts.size() <= protocol.skip_sentences) continue;
    const std::size_t from = d.sentence_starts[protocol.skip_sentences];
    const model::DocLogProb lp =
        model::doc_log_prob(params, d.tokens, d.annotations, {model::NoiseMode::kMean, 0, 0.0, 0});
    std::size_t made = 0;
    for (std::size_t t = from; t < lp.steps.size() && made < protocol.max_predictions; ++t) {
      const model::StepDecision& s = lp.steps[t];
      if (!s.choice_point || s.annotation.r != 1) continue;
      ++made;
      if (s.e_argmax == s.annotation.e) ++res.correct;
    }
    res.total += made;
  }
  return res;
}

PredictionResult always_new_baseline(const std::vector<corpus::EncodedDocument>& docs,
                                     const PredictionProtocol& protocol) {
  PredictionResult res;
  for (const corpus::EncodedDocument& d : docs) {
    if (d.sentence_starts.size() <= protocol.skip_sentences) continue;
    const std::size_t from = d.sentence_starts[protocol.skip_sentences];
    std::size_t seen = 0;
    std::size_t made = 0;
    for (std::size_t t = 0; t < d.annotations.size(); ++t) {
      const entity::EntityAnnotation& a = d.annotations[t];
      const bool start = a.r == 1 && (t == 0 || d.annotations[t - 1].l == 1);
      if (!start) continue;
      if (t >= from && made < protocol.max_predictions) {
        ++made;
        if (a.e == seen + 1) ++res.correct;
      }
      seen = std::max(seen, a.e);
    }
    res.total += made;
  }
  return res;
}

namespace {

void check_same_mentions(const CorefPartition& gold, const CorefPartition& sys) {
  if (gold.mentions.size() != gold.cluster.size() || sys.mentions.size() != sys.cluster.size()) {
    throw ContractError("scorer: partition has mismatched mention and cluster lists");
  }
  const std::set<Mention> a(gold.mentions.begin(), gold.mentions.end());
  const std::set<Mention> b(sys.mentions.begin(), sys.mentions.end());
  if (a.size() != gold.mentions.size() || b.size() != sys.mentions.size()) {
    throw ContractError("scorer: duplicate mention in partition");
  }
  if (a != b) throw ContractError("scorer: gold and system mention sets differ");
}

std::map<Mention, std::size_t> cluster_map(const CorefPartition& p) {
  std::map<Mention, std::size_t> m;
  for (std::size_t i = 0; i < p.mentions.size(); ++i) m[p.mentions[i]] = p.cluster[i];
  return m;
}

std::map<std::size_t, std::vector<Mention>> chains(const CorefPartition& p) {
  std::map<std::size_t, std::vector<Mention>> c;
  for (std::size_t i = 0; i < p.mentions.size(); ++i) c[p.cluster[i]].push_back(p.mentions[i]);
  return c;
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

// Link-based recall of `key` chains against `response`.
double muc_recall(const CorefPartition& key, const CorefPartition& response) {
  const auto resp = cluster_map(response);
  double num = 0.0;
  double den = 0.0;
  for (const auto& [id, chain] : chains(key)) {
    std::set<std::size_t> parts;
    for (const Mention& m : chain) parts.insert(resp.at(m));
    num += static_cast<double>(chain.size() - parts.size());
    den += static_cast<double>(chain.size() - 1);
  }
  return ratio(num, den);
}

double b3_recall(const CorefPartition& key, const CorefPartition& response) {
  const auto resp = cluster_map(response);
  const auto key_chains = chains(key);
  const auto resp_chains = chains(response);
  double total = 0.0;
  for (const auto& [id, chain] : key_chains) {
    for (const Mention& m : chain) {
      const auto& other = resp_chains.at(resp.at(m));
      std::size_t overlap = 0;
      for (const Mention& o : other) {
        if (std::find(chain.begin(), chain.end(), o) != chain.end()) ++overlap;
      }
      total += static_cast<double>(overlap) / static_cast<double>(chain.size());
    }
  }
  return ratio(total, static_cast<double>(key.mentions.size()));
}

}  // namespace

Prf muc(const CorefPartition& gold, const CorefPartition& sys) {
  check_same_mentions(gold, sys);
  Prf out;
  out.recall = muc_recall(gold, sys);
  out.precision = muc_recall(sys, gold);
  out.f1 = f1(out.precision, out.recall);
  return out;
}

Prf b_cubed(const CorefPartition& gold, const CorefPartition& sys) {
  check_same_mentions(gold, sys);
  Prf out;
  out.recall = b3_recall(gold, sys);
  out.precision = b3_recall(sys, gold);
  out.f1 = f1(out.precision, out.recall);
  return out;
}

double conll2(const CorefPartition& gold, const CorefPartition& sys) {
  return (muc(gold, sys).f1 + b_cubed(gold, sys).f1) / 2.0;
}

double paired_bootstrap(std::span<const double> a, std::span<const double> b, std::size_t resamples,
                        std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) throw ContractError("paired_bootstrap: need equal, non-empty samples");
  if (resamples < 1) throw ConfigError("paired_bootstrap: need at least one resample");
  Rng rng(seed);
  const std::size_t n = a.size();
  std::size_t not_better = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    double diff = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
      diff += a[i] - b[i];
    }
    if (diff <= 0.0) ++not_better;
  }
  return static_cast<double>(not_better) / static_cast<double>(resamples);
}

}  // namespace enlm::eval
