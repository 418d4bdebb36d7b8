#include "entitynlm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entitynlm/error.hpp"

namespace enlm::nn {

LstmCell LstmCell::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  LstmCell cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  for (std::size_t g = 0; g < kGates; ++g) {
    cell.w_input[g] = Tensor({hidden_dim, input_dim});
    cell.w_hidden[g] = Tensor({hidden_dim, hidden_dim});
    cell.bias[g] = Tensor({hidden_dim});
  }
  return cell;
}

void LstmCell::validate() const {
  for (std::size_t g = 0; g < kGates; ++g) {
    if (w_input[g].shape() != Shape{hidden_dim, input_dim} ||
        w_hidden[g].shape() != Shape{hidden_dim, hidden_dim} || bias[g].shape() != Shape{hidden_dim}) {
      throw DimensionError("lstm: gate " + std::to_string(g) + " weights " + shape_string(w_input[g].shape()) +
                           "/" + shape_string(w_hidden[g].shape()) + "/" + shape_string(bias[g].shape()) +
                           " inconsistent with d_x=" + std::to_string(input_dim) +
                           " d_h=" + std::to_string(hidden_dim));
    }
  }
}

BoundLstm bind(Tape& tape, const LstmCell& cell) {
  BoundLstm b;
  for (std::size_t g = 0; g < LstmCell::kGates; ++g) {
    b.w_input[g] = tape.param(cell.w_input[g]);
    b.w_hidden[g] = tape.param(cell.w_hidden[g]);
    b.bias[g] = tape.param(cell.bias[g]);
  }
  return b;
}

LstmOutput lstm_step(Tape& tape, const BoundLstm& cell, Var h_prev, Var c_prev, Var x) {
  std::array<Var, LstmCell::kGates> pre;
  for (std::size_t g = 0; g < LstmCell::kGates; ++g) {
    pre[g] = tape.add(tape.add(tape.matvec(cell.w_input[g], x), tape.matvec(cell.w_hidden[g], h_prev)),
                      cell.bias[g]);
  }
  const Var in_gate = tape.sigmoid(pre[0]);
  const Var forget_gate = tape.sigmoid(pre[1]);
  const Var out_gate = tape.sigmoid(pre[2]);
  const Var candidate = tape.tanh(pre[3]);
  if (tape.shape(c_prev) != tape.shape(candidate)) {
    throw DimensionError("lstm: cell state " + shape_string(tape.shape(c_prev)) + " vs hidden " +
                         shape_string(tape.shape(candidate)));
  }
  const Var c = tape.add(tape.mul(forget_gate, c_prev), tape.mul(in_gate, candidate));
  const Var h = tape.mul(out_gate, tape.tanh(c));
  return {h, c};
}

LstmOutput lstm_step(Tape& tape, const LstmCell& cell, Var h_prev, Var c_prev, Var x) {
  cell.validate();
  return lstm_step(tape, bind(tape, cell), h_prev, c_prev, x);
}

ClassMap::ClassMap(std::vector<std::size_t> class_of) : class_of_(std::move(class_of)) {
  if (class_of_.empty()) throw ConfigError("class map: empty vocabulary");
  const std::size_t num_classes = *std::max_element(class_of_.begin(), class_of_.end()) + 1;
  std::vector<std::size_t> sizes(num_classes, 0);
  for (std::size_t c : class_of_) ++sizes[c];
  begin_.resize(num_classes);
  end_.resize(num_classes);
  std::size_t row = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (sizes[c] == 0) throw ConfigError("class map: class " + std::to_string(c) + " is empty");
    begin_[c] = row;
    row += sizes[c];
    end_[c] = row;
  }
  row_of_.resize(class_of_.size());
  word_at_row_.resize(class_of_.size());
  std::vector<std::size_t> next = begin_;
  for (std::size_t w = 0; w < class_of_.size(); ++w) {
    const std::size_t r = next[class_of_[w]]++;
    row_of_[w] = r;
    word_at_row_[r] = w;
  }
}

CfsmLayer CfsmLayer::zeros(ClassMap classes, std::size_t input_dim) {
  CfsmLayer layer;
  const std::size_t c = classes.num_classes();
  const std::size_t v = classes.num_words();
  layer.classes = std::move(classes);
  layer.class_weights = Tensor({c, input_dim});
  layer.class_bias = Tensor({c});
  layer.word_weights = Tensor({v, input_dim});
  layer.word_bias = Tensor({v});
  return layer;
}

void CfsmLayer::validate() const {
  const std::size_t c = classes.num_classes();
  const std::size_t v = classes.num_words();
  const std::size_t d = class_weights.cols();
  if (class_weights.shape() != Shape{c, d} || class_bias.shape() != Shape{c} ||
      word_weights.shape() != Shape{v, d} || word_bias.shape() != Shape{v}) {
    throw DimensionError("cfsm: weights inconsistent with " + std::to_string(c) + " classes, " +
                         std::to_string(v) + " words, input " + std::to_string(d));
  }
}

BoundCfsm bind(Tape& tape, const CfsmLayer& layer) {
  BoundCfsm b;
  b.classes = &layer.classes;
  b.class_weights = tape.param(layer.class_weights);
  b.class_bias = tape.param(layer.class_bias);
  b.word_weights = tape.param(layer.word_weights);
  b.word_bias = tape.param(layer.word_bias);
  return b;
}

Var cfsm_log_prob(Tape& tape, const BoundCfsm& layer, Var rep, std::size_t word) {
  const ClassMap& cm = *layer.classes;
  if (word >= cm.num_words()) {
    throw VocabularyError("cfsm: word id " + std::to_string(word) + " outside vocabulary of " +
                          std::to_string(cm.num_words()));
  }
  const std::size_t c = cm.class_of(word);
  const Var class_lp = tape.log_softmax(
      tape.linear(layer.class_weights, layer.class_bias, rep, 0, cm.num_classes()));
  const std::size_t b = cm.class_begin(c);
  const std::size_t e = cm.class_end(c);
  const Var class_term = tape.pick(class_lp, c);
  if (e - b == 1) return class_term;
  const Var word_lp = tape.log_softmax(tape.linear(layer.word_weights, layer.word_bias, rep, b, e));
  return tape.add(class_term, tape.pick(word_lp, cm.row_of(word) - b));
}

std::vector<double> cfsm_log_probs(Tape& tape, const BoundCfsm& layer, Var rep) {
  const ClassMap& cm = *layer.classes;
  const std::size_t mark = tape.size();
  const Var class_lp = tape.log_softmax(
      tape.linear(layer.class_weights, layer.class_bias, rep, 0, cm.num_classes()));
  const std::vector<double> class_values(tape.value(class_lp).begin(), tape.value(class_lp).end());
  std::vector<double> out(cm.num_words(), 0.0);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::size_t b = cm.class_begin(c);
    const std::size_t e = cm.class_end(c);
    const Var word_lp = tape.log_softmax(tape.linear(layer.word_weights, layer.word_bias, rep, b, e));
    const auto wv = tape.value(word_lp);
    for (std::size_t r = b; r < e; ++r) out[cm.word_at_row(r)] = class_values[c] + wv[r - b];
  }
  tape.truncate(mark);
  return out;
}

std::size_t cfsm_sample(Tape& tape, const BoundCfsm& layer, Var rep, Rng& rng) {
  const ClassMap& cm = *layer.classes;
  const std::size_t mark = tape.size();
  const Var class_lp = tape.log_softmax(
      tape.linear(layer.class_weights, layer.class_bias, rep, 0, cm.num_classes()));
  const std::size_t c = sample_log_categorical(tape.value(class_lp), rng);
  const std::size_t b = cm.class_begin(c);
  const std::size_t e = cm.class_end(c);
  const Var word_lp = tape.log_softmax(tape.linear(layer.word_weights, layer.word_bias, rep, b, e));
  const std::size_t r = b + sample_log_categorical(tape.value(word_lp), rng);
  tape.truncate(mark);
  return cm.word_at_row(r);
}

std::vector<std::size_t> assign_classes(std::span<const std::uint64_t> counts, std::size_t num_classes) {
  if (num_classes < 1) throw ConfigError("assign_classes: need at least one class");
  if (num_classes > counts.size()) {
    throw ConfigError("assign_classes: " + std::to_string(num_classes) + " classes for a vocabulary of " +
                      std::to_string(counts.size()));
  }
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double target = total / static_cast<double>(num_classes);

  std::vector<std::size_t> out(counts.size(), 0);
  std::size_t bucket = 0;
  std::size_t in_bucket = 0;
  double mass = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double w = static_cast<double>(counts[order[k]]);
    const std::size_t words_left = order.size() - k;
    const std::size_t buckets_left = num_classes - bucket;
    if (in_bucket > 0 && bucket + 1 < num_classes) {
      // Close the bucket before this word when its midpoint would fall past
      // the bucket's mass boundary, or when every remaining bucket needs
      // exactly one of the remaining words.
      const double boundary = target * static_cast<double>(bucket + 1);
      if (mass + w / 2.0 > boundary || words_left < buckets_left) {
        ++bucket;
        in_bucket = 0;
      }
    }
    out[order[k]] = bucket;
    ++in_bucket;
    mass += w;
  }
  return out;
}

std::map<std::string, std::size_t> assign_classes(const std::map<std::string, std::uint64_t>& counts,
                                                  std::size_t num_classes) {
  // std::map iteration is lexicographic, which gives the tie order.
  std::vector<std::uint64_t> flat;
  flat.reserve(counts.size());
  for (const auto& [word, n] : counts) flat.push_back(n);
  const auto classes = assign_classes(flat, num_classes);
  std::map<std::string, std::size_t> out;
  std::size_t i = 0;
  for (const auto& [word, n] : counts) out.emplace(word, classes[i++]);
  return out;
}

double GlorotInit::bound(const Tensor& t) {
  const double fan = t.rank() == 2 ? static_cast<double>(t.rows() + t.cols())
                                   : static_cast<double>(1 + t.size());
  return std::sqrt(6.0 / fan);
}

void GlorotInit::fill(Tensor& t) {
  const double b = bound(t);
  for (double& x : t.data()) x = (2.0 * uniform01(rng_) - 1.0) * b;
}

Var dropout(Tape& tape, Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be below 1");
  const std::size_t n = tape.value(x).size();
  std::vector<double> m(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& e : m) e = uniform01(rng) < rate ? 0.0 : keep_scale;
  return tape.mask(x, std::move(m));
}

}  // namespace enlm::nn
