#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "entitynlm/rng.hpp"
#include "entitynlm/tape.hpp"
#include "entitynlm/tensor.hpp"

namespace enlm::nn {

// Single-layer LSTM. Gate order is input, forget, output, candidate. Weight
// matrices are stored output-major (d_h rows) so a forward step is a plain
// matrix-vector product.
struct LstmCell {
  static constexpr std::size_t kGates = 4;

  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::array<Tensor, kGates> w_input;   // d_h x d_x
  std::array<Tensor, kGates> w_hidden;  // d_h x d_h
  std::array<Tensor, kGates> bias;      // d_h

  static LstmCell zeros(std::size_t input_dim, std::size_t hidden_dim);
  void validate() const;
};

struct BoundLstm {
  std::array<Var, LstmCell::kGates> w_input;
  std::array<Var, LstmCell::kGates> w_hidden;
  std::array<Var, LstmCell::kGates> bias;
};

struct LstmOutput {
  Var h;
  Var c;
};

BoundLstm bind(Tape& tape, const LstmCell& cell);
LstmOutput lstm_step(Tape& tape, const BoundLstm& cell, Var h_prev, Var c_prev, Var x);
// Shape-checked convenience overload that binds the cell on the fly.
LstmOutput lstm_step(Tape& tape, const LstmCell& cell, Var h_prev, Var c_prev, Var x);

// Word-to-class assignment for the class-factorized softmax. Words of one
// class occupy a contiguous block of rows in the word-prediction matrix.
class ClassMap {
 public:
  ClassMap() = default;
  // class_of[w] for every word id; classes must be dense 0..C-1 and non-empty.
  explicit ClassMap(std::vector<std::size_t> class_of);

  std::size_t num_words() const { return class_of_.size(); }
  std::size_t num_classes() const { return begin_.size(); }
  std::size_t class_of(std::size_t word) const { return class_of_.at(word); }
  std::size_t row_of(std::size_t word) const { return row_of_.at(word); }
  std::size_t class_begin(std::size_t c) const { return begin_.at(c); }
  std::size_t class_end(std::size_t c) const { return end_.at(c); }
  std::size_t word_at_row(std::size_t row) const { return word_at_row_.at(row); }
  const std::vector<std::size_t>& assignment() const { return class_of_; }

 private:
  std::vector<std::size_t> class_of_;
  std::vector<std::size_t> row_of_;
  std::vector<std::size_t> word_at_row_;
  std::vector<std::size_t> begin_;
  std::vector<std::size_t> end_;
};

struct CfsmLayer {
  ClassMap classes;
  Tensor class_weights;  // C x d
  Tensor class_bias;     // C
  Tensor word_weights;   // V x d, rows ordered by ClassMap::row_of
  Tensor word_bias;      // V

  static CfsmLayer zeros(ClassMap classes, std::size_t input_dim);
  std::size_t input_dim() const { return class_weights.cols(); }
  void validate() const;
};

struct BoundCfsm {
  const ClassMap* classes = nullptr;
  Var class_weights;
  Var class_bias;
  Var word_weights;
  Var word_bias;
};

BoundCfsm bind(Tape& tape, const CfsmLayer& layer);

// log P(class(word) | rep) + log P(word | class(word), rep)
Var cfsm_log_prob(Tape& tape, const BoundCfsm& layer, Var rep, std::size_t word);
// Log-probability of every word, indexed by word id. Values only.
std::vector<double> cfsm_log_probs(Tape& tape, const BoundCfsm& layer, Var rep);
// Two-step ancestral draw: class, then word within the class.
std::size_t cfsm_sample(Tape& tape, const BoundCfsm& layer, Var rep, Rng& rng);

// Frequency binning: sort by count (descending, ties by key) and cut the
// sequence into `num_classes` contiguous, non-empty buckets of roughly equal
// total mass. Returns the class of each input position.
std::vector<std::size_t> assign_classes(std::span<const std::uint64_t> counts, std::size_t num_classes);
std::map<std::string, std::size_t> assign_classes(const std::map<std::string, std::uint64_t>& counts,
                                                  std::size_t num_classes);

// Uniform in +-sqrt(6 / (fan_in + fan_out)); vectors use (1 + n).
class GlorotInit {
 public:
  explicit GlorotInit(std::uint64_t seed) : rng_(seed) {}
  void fill(Tensor& t);
  static double bound(const Tensor& t);

 private:
  Rng rng_;
};

// Inverted dropout: kept units are scaled by 1 / (1 - rate).
Var dropout(Tape& tape, Var x, double rate, Rng& rng);

}  // namespace enlm::nn
