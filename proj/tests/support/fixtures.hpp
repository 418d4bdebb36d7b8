#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "entitynlm/corpus.hpp"
#include "entitynlm/entity_state.hpp"
#include "entitynlm/model.hpp"
#include "entitynlm/nn.hpp"
#include "entitynlm/rerank.hpp"
#include "entitynlm/rng.hpp"

namespace enlm::entity {
inline void PrintTo(const EntityAnnotation& a, std::ostream* os) {
  *os << "(" << a.r << "," << a.e << "," << a.l << ")";
}
}  // namespace enlm::entity

namespace enlm::testing {

using entity::EntityAnnotation;

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero entries from
// turning rounding noise into large ratios.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline nn::ClassMap round_robin_classes(std::size_t vocab, std::size_t classes) {
  std::vector<std::size_t> c(vocab);
  for (std::size_t w = 0; w < vocab; ++w) c[w] = w % classes;
  return nn::ClassMap(std::move(c));
}

struct ToySpec {
  std::size_t vocab = 6;
  std::size_t classes = 2;
  std::size_t word_dim = 3;
  std::size_t hidden_dim = 4;
  std::size_t max_length = 3;
  double sigma = 0.01;
  // Spread of the uniform draw for every entry, biases included.
  double scale = 0.5;
};

// Every entry drawn uniform in [-scale, scale], so no gradient path is
// hidden behind a zero initialization.
inline model::ModelParams toy_params(const ToySpec& spec, std::uint64_t seed) {
  model::ModelConfig c;
  c.vocab_size = spec.vocab;
  c.word_dim = spec.word_dim;
  c.hidden_dim = spec.hidden_dim;
  c.num_classes = spec.classes;
  c.max_mention_length = spec.max_length;
  c.sigma = spec.sigma;
  model::ModelParams p = model::ModelParams::zeros(c, round_robin_classes(spec.vocab, spec.classes));
  Rng rng(seed);
  for (const model::NamedTensor& nt : p.tensors()) {
    for (double& v : nt.tensor->data()) v = spec.scale * (2.0 * uniform01(rng) - 1.0);
  }
  return p;
}

inline EntityAnnotation out() { return EntityAnnotation::outside(); }
inline EntityAnnotation men(std::size_t e, std::size_t l) { return EntityAnnotation::mention(e, l); }

// The running example: two sentences, four entities.
inline corpus::RawDocument running_example() {
  corpus::RawDocument d;
  d.id = "running-example";
  d.sentences = {
      {"John", "wanted", "to", "go", "to", "the", "coffee", "shop", "in", "downtown", "Copenhagen", "."},
      {"He", "was", "told", "that", "it", "sold", "the", "best", "beans", "."},
  };
  d.mentions = {
      {"john", 0, 0, 0}, {"shop", 0, 5, 7}, {"copenhagen", 0, 9, 10},
      {"john", 1, 0, 0}, {"shop", 1, 4, 4}, {"beans", 1, 6, 8},
  };
  return d;
}

struct Rows {
  std::vector<int> r;
  std::vector<std::size_t> e;  // 0 for "no entity"
  std::vector<std::size_t> l;
};

// Printed rows for tokens 1-22, with the last period read as R = 0, L = 1.
inline Rows running_example_rows() {
  return {
      {1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0},
      {1, 0, 0, 0, 0, 2, 2, 2, 0, 3, 3, 0, 1, 0, 0, 0, 2, 0, 4, 4, 4, 0},
      {1, 1, 1, 1, 1, 3, 2, 1, 1, 2, 1, 1, 1, 1, 1, 1, 1, 1, 3, 2, 1, 1},
  };
}

inline std::vector<EntityAnnotation> annotations_of(const Rows& rows) {
  std::vector<EntityAnnotation> a;
  for (std::size_t i = 0; i < rows.r.size(); ++i) a.push_back({rows.r[i], rows.e[i], rows.l[i]});
  return a;
}

// Six tokens, two entities, one two-token mention.
inline std::vector<EntityAnnotation> two_entity_toy() {
  return {men(1, 1), out(), men(2, 2), men(2, 1), men(1, 1), out()};
}

// Random valid trajectory of `length` tokens; the last mention ends in time.
inline std::vector<EntityAnnotation> random_trajectory(std::size_t length, std::size_t max_length, Rng& rng,
                                                       double mention_rate = 0.5) {
  entity::StateMachine sm(max_length);
  std::vector<EntityAnnotation> out_seq;
  for (std::size_t t = 0; t < length; ++t) {
    EntityAnnotation a;
    if (!sm.at_choice_point()) {
      a = sm.forced_continuation();
    } else if (uniform01(rng) < mention_rate) {
      const auto adm = sm.admissible_entities();
      a.r = 1;
      a.e = adm[std::min(adm.size() - 1, static_cast<std::size_t>(uniform01(rng) * adm.size()))];
      const std::size_t cap = std::min(max_length, length - t);
      a.l = 1 + std::min(cap - 1, static_cast<std::size_t>(uniform01(rng) * cap));
    }
    sm.advance(a);
    out_seq.push_back(a);
  }
  return out_seq;
}

inline std::vector<std::size_t> random_words(std::size_t length, std::size_t vocab, Rng& rng) {
  std::vector<std::size_t> w(length);
  for (auto& x : w) x = std::min(vocab - 1, static_cast<std::size_t>(uniform01(rng) * vocab));
  return w;
}

// Random pair scores over n mentions; some pairs missing, ties likely.
inline rerank::PairScores random_pair_scores(std::size_t n, Rng& rng, bool with_ties = true) {
  std::vector<eval::Mention> mentions;
  for (std::size_t j = 0; j < n; ++j) mentions.emplace_back(2 * j, 2 * j);
  rerank::PairScores ps = rerank::PairScores::empty("fixture", mentions);
  auto draw = [&] {
    const double v = 4.0 * uniform01(rng) - 2.0;
    return with_ties ? std::round(v * 2.0) / 2.0 : v;
  };
  for (std::size_t j = 0; j < n; ++j) {
    ps.epsilon[j] = draw();
    for (std::size_t i = 0; i < j; ++i) {
      if (uniform01(rng) < 0.8) ps.pairs[j][i] = draw();
    }
  }
  return ps;
}

// Central finite difference of f with respect to every entry of `params`.
// Reports the worst relative error per named tensor.
struct GradientReport {
  std::string worst_tensor;
  double worst = 0.0;
  std::size_t entries = 0;
};

inline GradientReport check_gradients(model::ModelParams& params, const std::function<double()>& f,
                                      const std::vector<std::vector<double>>& analytic, double step = 1e-5) {
  GradientReport rep;
  auto tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto data = tensors[i].tensor->data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + step;
      const double up = f();
      data[k] = saved - step;
      const double down = f();
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i].empty() ? 0.0 : analytic[i][k];
      const double err = relative_error(a, numeric);
      ++rep.entries;
      if (err > rep.worst) {
        rep.worst = err;
        rep.worst_tensor = tensors[i].name;
      }
    }
  }
  return rep;
}

}  // namespace enlm::testing
