#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entitynlm/corpus.hpp"
#include "entitynlm/model.hpp"
#include "entitynlm/rng.hpp"

namespace enlm::train {

struct TrainConfig {
  std::string optimizer = "adagrad";
  // Unset means the optimizer default (adagrad 0.1, adam 0.001).
  std::optional<double> learning_rate;
  double dropout = 0.2;
  std::size_t word_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t entity_dim = 0;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::size_t patience = 3;
  std::size_t min_count = 2;
  // 0 means ceil(sqrt(vocabulary size)).
  std::size_t num_classes = 0;
  std::size_t max_mention_length = entity::kDefaultMaxLength;
  double clip_norm = 5.0;
  double sigma = 0.01;
  bool entity_blind = false;
  bool proposal_heads = true;
  // Extra passes over the training set after model selection that update
  // only the proposal heads.
  std::size_t proposal_epochs = 10;
  // Allows dropout and dimensions outside the standard grids.
  bool off_grid = false;

  double effective_learning_rate() const;
  // Unknown keys and unparsable values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  // "key = value" lines; '#' starts a comment.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
  void validate() const;
  // Canonical key=value form; parse(to_string()) round-trips.
  std::string to_string() const;
  model::ModelConfig model_config(std::size_t vocab_size) const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // grads[i] may be empty (no gradient reached that tensor).
  virtual void step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads) = 0;
};

class AdaGrad : public Optimizer {
 public:
  explicit AdaGrad(double learning_rate, double epsilon = 1e-20) : lr_(learning_rate), eps_(epsilon) {}
  void step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads) override;
  const std::vector<std::vector<double>>& accumulators() const { return sum_sq_; }

 private:
  double lr_;
  double eps_;
  std::vector<std::vector<double>> sum_sq_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {}
  void step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads) override;
  std::uint64_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

struct EpochStats {
  // Mean per-token joint log-probability (natural log) over the epoch.
  double mean_objective = 0.0;
  std::size_t tokens = 0;
  std::size_t documents = 0;
};

// One pass of per-document updates in an rng-shuffled order.
EpochStats train_epoch(model::ModelParams& params, Optimizer& optimizer,
                       const std::vector<corpus::EncodedDocument>& docs, const TrainConfig& config, Rng& rng);

// Gradient of -log P(doc) w.r.t. every tensor of params.tensors().
// Clipping and the entity-blind freeze are applied.
struct DocGradient {
  double log_prob = 0.0;
  std::vector<std::vector<double>> grads;
};
DocGradient document_gradient(const model::ModelParams& params, const corpus::EncodedDocument& doc,
                              const TrainConfig& config, std::uint64_t noise_seed, std::uint64_t dropout_seed);

// Gradient of -log Q(gold annotations | words) w.r.t. the proposal heads
// only (other entries empty), clipped.
std::vector<std::vector<double>> proposal_gradient(const model::ModelParams& params,
                                                   const corpus::EncodedDocument& doc, const TrainConfig& config,
                                                   std::uint64_t noise_seed);

// 2^(-(1/T) * sum log2 P(X, R, E, L)) with dropout off and fixed
// per-document noise seeds, so repeated calls agree exactly.
double joint_perplexity(const model::ModelParams& params, const std::vector<corpus::EncodedDocument>& docs,
                        std::uint64_t seed = 0);

// Index of the candidate with the lowest dev joint perplexity; ties keep
// the earliest candidate.
std::size_t select_model(const std::vector<corpus::EncodedDocument>& dev,
                         std::span<const model::ModelParams* const> candidates, std::uint64_t seed = 0);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_objective = 0.0;
  double dev_perplexity = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Full run: class assignment from vocabulary counts, initialization,
// epochs with early stopping on dev joint perplexity. With an empty dev set
// the final epoch's parameters are returned.
TrainResult train(const TrainConfig& config, const corpus::Vocabulary& vocab,
                  const std::vector<corpus::EncodedDocument>& train_docs,
                  const std::vector<corpus::EncodedDocument>& dev_docs, const EpochCallback& on_epoch = {});

std::string format_epoch(const EpochLog& log);

}  // namespace enlm::train
