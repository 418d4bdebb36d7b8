#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "entitynlm/entity_state.hpp"
#include "entitynlm/eval.hpp"
#include "entitynlm/model.hpp"

namespace enlm::rerank {

// Antecedent value meaning "no antecedent".
inline constexpr std::size_t kEpsilon = std::numeric_limits<std::size_t>::max();

// Pairwise antecedent scores for one document. Missing pairs are
// inadmissible (-inf); the empty antecedent is always scored.
struct PairScores {
  std::string doc_id;
  std::vector<eval::Mention> mentions;     // in document order
  std::vector<std::vector<double>> pairs;  // pairs[j][i], i < j
  std::vector<double> epsilon;             // epsilon[j]

  static PairScores empty(std::string doc_id, std::vector<eval::Mention> mentions);
  std::size_t size() const { return mentions.size(); }
  double score(std::size_t j, std::size_t antecedent) const;
  void validate() const;
};

// Text format, one record per document:
//   doc <id> <mention count>
//   mention <j> <start> <end>
//   pair <j> <i> <score>      (i < j)
//   pair <j> eps <score>      (required for every j)
//   end
std::vector<PairScores> read_pair_scores(std::istream& in, const std::string& origin = "<stream>");
std::vector<PairScores> read_pair_scores_file(const std::string& path);
void write_pair_scores(std::ostream& out, const PairScores& ps);

struct AntecedentTree {
  std::vector<std::size_t> antecedent;  // kEpsilon or an earlier mention

  // Cluster id per mention, numbered by first appearance.
  std::vector<std::size_t> partition() const;
  friend bool operator==(const AntecedentTree&, const AntecedentTree&) = default;
};

double base_score(const PairScores& ps, const AntecedentTree& tree);

// Per-mention argmax; ties go to the closer antecedent, epsilon last.
AntecedentTree greedy_decode(const PairScores& ps);

struct Candidate {
  AntecedentTree tree;
  double base_score = 0.0;
  bool padding = false;
};

// First entry is the greedy tree. Single-antecedent swaps of the greedy
// tree follow in ascending score-gap order (ties by mention, then
// antecedent, epsilon last); only new partitions are admitted. The list is
// padded to k with copies of the last admitted entry.
std::vector<Candidate> kbest(const PairScores& ps, std::size_t k);

// Replace the last entry with `tree` unless its partition is already listed.
void inject(std::vector<Candidate>& list, const PairScores& ps, const AntecedentTree& tree);

eval::CorefPartition to_partition(const PairScores& ps, const AntecedentTree& tree);

// Per-token annotations for a candidate: chains of size one are dropped.
std::vector<entity::EntityAnnotation> to_annotations(const PairScores& ps, const AntecedentTree& tree,
                                                     std::size_t length,
                                                     std::size_t max_length = entity::kDefaultMaxLength);

enum class Mode { kLmOnly, kCombined };

struct RerankOptions {
  Mode mode = Mode::kLmOnly;
  double alpha = 1.0;
  double beta = 1.0;
};

struct RankedCandidate {
  std::size_t original_index = 0;
  double log_prob = 0.0;
  double base_score = 0.0;
  double score = 0.0;
  bool valid = true;
  std::string error;
};

// Sorted best first. Ties keep list order; invalid candidates sort last.
std::vector<RankedCandidate> rerank(const model::ModelParams& params, const std::vector<std::size_t>& tokens,
                                    const PairScores& ps, const std::vector<Candidate>& list,
                                    const RerankOptions& options);

// Gold-informed scores for experiments: coreferent pairs get `signal`,
// others 0, the epsilon score is signal/2 for chain-initial mentions and 0
// otherwise, all plus N(0, noise^2).
PairScores synth_pair_scores(const std::string& doc_id, const eval::CorefPartition& gold, double signal,
                             double noise, std::uint64_t seed);

// The tree linking every mention to the closest earlier mention of its chain.
AntecedentTree gold_tree(const eval::CorefPartition& gold);

}  // namespace enlm::rerank
