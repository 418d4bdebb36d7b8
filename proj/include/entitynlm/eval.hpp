#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entitynlm/corpus.hpp"
#include "entitynlm/model.hpp"

namespace enlm::eval {

// Max-shifted log(mean(exp(x))). All -inf throws NumericalError.
double log_mean_exp(std::span<const double> log_weights);
// (sum w)^2 / sum w^2, computed from log-weights.
double effective_sample_size(std::span<const double> log_weights);

struct ImportanceEstimate {
  std::size_t samples = 0;
  std::vector<double> log_weights;  // log P(x, a) - log Q(a | x)
  double log_marginal = 0.0;
  double ess = 0.0;
};

// Draws `samples` trajectories from the proposal and weights them by the
// joint. Each sample uses the same new-entity draws under P and Q.
ImportanceEstimate importance_estimate(const model::ModelParams& params, std::span<const std::size_t> tokens,
                                       std::size_t samples, std::uint64_t seed,
                                       model::NoiseMode noise = model::NoiseMode::kSampled,
                                       const std::string& doc_id = "");

struct PerplexityReport {
  double perplexity = 0.0;
  double total_log_prob = 0.0;
  std::size_t tokens = 0;
  std::size_t samples = 0;
  std::vector<double> doc_log_probs;
  std::vector<double> doc_ess;
};

// 2^(-total / T) with total = sum over documents of log2 P^(X).
// Document d uses seed derive_seed(seed, d), so results do not depend on
// the number of workers.
PerplexityReport perplexity_is(const model::ModelParams& params, const std::vector<corpus::EncodedDocument>& docs,
                               std::size_t samples, std::uint64_t seed,
                               model::NoiseMode noise = model::NoiseMode::kSampled, std::size_t workers = 1);

// Exact word perplexity of a model whose word distribution ignores the
// annotations (W_e = 0). Throws ContractError otherwise.
PerplexityReport perplexity_exact_blind(const model::ModelParams& params,
                                        const std::vector<corpus::EncodedDocument>& docs);

inline constexpr std::size_t kMaxEnumerationLength = 8;
inline constexpr std::size_t kMaxEnumerationMentionLength = 2;

// log P(X) by summing the joint over every valid (R, E, L) trajectory, with
// new-entity embeddings fixed at normalize(r_1). Guarded to tiny inputs.
double exact_marginal(const model::ModelParams& params, std::span<const std::size_t> tokens);
// Sum of P(X, R, E, L) over every word sequence of `length` and every
// trajectory. A proper model gives 1.
double total_trajectory_mass(const model::ModelParams& params, std::size_t length);
// Every valid annotation sequence for a document of `length` tokens.
std::vector<std::vector<entity::EntityAnnotation>> enumerate_trajectories(std::size_t length,
                                                                          std::size_t max_length);

struct PredictionProtocol {
  std::size_t skip_sentences = 3;
  std::size_t max_predictions = 30;
};

struct PredictionResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

// Gold annotations are teacher-forced; at each gold mention start inside
// the protocol window the argmax of p(E) (new entity included) is compared
// with the gold index.
PredictionResult entity_prediction(const model::ModelParams& params, const std::vector<corpus::EncodedDocument>& docs,
                                   const PredictionProtocol& protocol = {});
PredictionResult always_new_baseline(const std::vector<corpus::EncodedDocument>& docs,
                                     const PredictionProtocol& protocol = {});

using Mention = std::pair<std::size_t, std::size_t>;  // token span, inclusive

struct CorefPartition {
  std::vector<Mention> mentions;
  std::vector<std::size_t> cluster;  // cluster id per mention
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Mention sets must agree; otherwise ContractError.
Prf muc(const CorefPartition& gold, const CorefPartition& sys);
Prf b_cubed(const CorefPartition& gold, const CorefPartition& sys);
// Mean of the MUC and B-cubed F1 ("CoNLL-2").
double conll2(const CorefPartition& gold, const CorefPartition& sys);

// Fraction of bootstrap resamples in which mean(a - b) <= 0.
double paired_bootstrap(std::span<const double> a, std::span<const double> b, std::size_t resamples,
                        std::uint64_t seed);

}  // namespace enlm::eval
