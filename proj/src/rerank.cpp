#include "entitynlm/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "entitynlm/error.hpp"
#include "entitynlm/rng.hpp"

namespace enlm::rerank {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

PairScores PairScores::empty(std::string doc_id, std::vector<eval::Mention> mentions) {
  PairScores ps;
  ps.doc_id = std::move(doc_id);
  ps.mentions = std::move(mentions);
  ps.pairs.resize(ps.mentions.size());
  for (std::size_t j = 0; j < ps.mentions.size(); ++j) ps.pairs[j].assign(j, kNegInf);
  ps.epsilon.assign(ps.mentions.size(), kNegInf);
  return ps;
}

double PairScores::score(std::size_t j, std::size_t antecedent) const {
  if (j >= mentions.size()) throw ContractError("pair scores: mention " + std::to_string(j) + " out of range");
  if (antecedent == kEpsilon) return epsilon[j];
  if (antecedent >= j) {
    throw ContractError("pair scores: antecedent " + std::to_string(antecedent) + " does not precede mention " +
                        std::to_string(j));
  }
  return pairs[j][antecedent];
}

void PairScores::validate() const {
  if (pairs.size() != mentions.size() || epsilon.size() != mentions.size()) {
    throw IngestionError("pair scores '" + doc_id + "': table sizes disagree with the mention list");
  }
  for (std::size_t j = 0; j < mentions.size(); ++j) {
    if (pairs[j].size() != j) throw IngestionError("pair scores '" + doc_id + "': malformed row " + std::to_string(j));
    if (!std::isfinite(epsilon[j])) {
      throw IngestionError("pair scores '" + doc_id + "': mention " + std::to_string(j) +
                           " has no empty-antecedent score");
    }
    if (mentions[j].first > mentions[j].second) {
      throw IngestionError("pair scores '" + doc_id + "': mention " + std::to_string(j) + " has an inverted span");
    }
    if (j > 0 && !(mentions[j - 1] < mentions[j])) {
      throw IngestionError("pair scores '" + doc_id + "': mentions are not in document order at " +
                           std::to_string(j));
    }
  }
}

std::vector<PairScores> read_pair_scores(std::istream& in, const std::string& origin) {
  std::vector<PairScores> out;
  std::string line;
  std::size_t lineno = 0;
  bool open = false;
  std::size_t declared = 0;
  std::vector<bool> seen_mention;
  auto fail = [&](const std::string& what) -> void {
    throw IngestionError(origin + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "doc") {
      if (open) fail("'doc' before 'end' of the previous document");
      std::string id;
      if (!(ls >> id >> declared)) fail("expected: doc <id> <mention count>");
      out.push_back(PairScores::empty(id, std::vector<eval::Mention>(declared)));
      seen_mention.assign(declared, false);
      open = true;
    } else if (!open) {
      fail("'" + tag + "' outside a document");
    } else if (tag == "mention") {
      std::size_t j, s, e;
      if (!(ls >> j >> s >> e)) fail("expected: mention <j> <start> <end>");
      if (j >= declared) fail("mention index " + std::to_string(j) + " beyond declared count");
      out.back().mentions[j] = {s, e};
      seen_mention[j] = true;
    } else if (tag == "pair") {
      std::size_t j;
      std::string ant;
      double score;
      if (!(ls >> j >> ant >> score)) fail("expected: pair <j> <i|eps> <score>");
      if (j >= declared) fail("mention index " + std::to_string(j) + " beyond declared count");
      if (!std::isfinite(score)) fail("non-finite score");
      if (ant == "eps") {
        out.back().epsilon[j] = score;
      } else {
        std::size_t i = 0;
        try {
          i = std::stoul(ant);
        } catch (const std::exception&) {
          fail("antecedent must be an index or 'eps'");
        }
        if (i >= j) fail("antecedent " + std::to_string(i) + " does not precede mention " + std::to_string(j));
        out.back().pairs[j][i] = score;
      }
    } else if (tag == "end") {
      for (std::size_t j = 0; j < declared; ++j) {
        if (!seen_mention[j]) fail("mention " + std::to_string(j) + " was never declared");
      }
      try {
        out.back().validate();
      } catch (const IngestionError& e) {
        fail(e.what());
      }
      open = false;
    } else {
      fail("unknown record '" + tag + "'");
    }
  }
  if (open) throw IngestionError(origin + ": document '" + out.back().doc_id + "' lacks 'end'");
  return out;
}

std::vector<PairScores> read_pair_scores_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open pair scores '" + path + "'");
  return read_pair_scores(in, path);
}

void write_pair_scores(std::ostream& out, const PairScores& ps) {
  std::ostringstream os;
  os.precision(17);
  os << "doc " << ps.doc_id << ' ' << ps.size() << '\n';
  for (std::size_t j = 0; j < ps.size(); ++j) {
    os << "mention " << j << ' ' << ps.mentions[j].first << ' ' << ps.mentions[j].second << '\n';
  }
  for (std::size_t j = 0; j < ps.size(); ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      if (std::isfinite(ps.pairs[j][i])) os << "pair " << j << ' ' << i << ' ' << ps.pairs[j][i] << '\n';
    }
    os << "pair " << j << " eps " << ps.epsilon[j] << '\n';
  }
  os << "end\n";
  out << os.str();
}

std::vector<std::size_t> AntecedentTree::partition() const {
  std::vector<std::size_t> out(antecedent.size());
  std::size_t next = 0;
  for (std::size_t j = 0; j < antecedent.size(); ++j) {
    const std::size_t a = antecedent[j];
    if (a == kEpsilon) {
      out[j] = next++;
    } else {
      if (a >= j) throw ContractError("antecedent tree: mention " + std::to_string(j) + " points forward");
      out[j] = out[a];
    }
  }
  return out;
}

double base_score(const PairScores& ps, const AntecedentTree& tree) {
  double s = 0.0;
  for (std::size_t j = 0; j < tree.antecedent.size(); ++j) s += ps.score(j, tree.antecedent[j]);
  return s;
}

AntecedentTree greedy_decode(const PairScores& ps) {
  AntecedentTree t;
  t.antecedent.resize(ps.size(), kEpsilon);
  for (std::size_t j = 0; j < ps.size(); ++j) {
    // Closest first with strict improvement, then epsilon: ties keep the
    // closer mention and epsilon never wins a tie.
    std::size_t best = kEpsilon;
    double best_score = kNegInf;
    for (std::size_t i = j; i-- > 0;) {
      if (ps.pairs[j][i] > best_score) {
        best = i;
        best_score = ps.pairs[j][i];
      }
    }
    if (ps.epsilon[j] > best_score) best = kEpsilon;
    t.antecedent[j] = best;
  }
  return t;
}

std::vector<Candidate> kbest(const PairScores& ps, std::size_t k) {
  if (k < 1) throw ConfigError("kbest: k must be >= 1");
  const AntecedentTree greedy = greedy_decode(ps);
  std::vector<Candidate> list{{greedy, base_score(ps, greedy), false}};
  std::set<std::vector<std::size_t>> seen{greedy.partition()};

  struct Swap {
    double gap;
    std::size_t j;
    std::size_t i;
  };
  std::vector<Swap> swaps;
  for (std::size_t j = 0; j < ps.size(); ++j) {
    const double top = ps.score(j, greedy.antecedent[j]);
    for (std::size_t i = 0; i < j; ++i) {
      if (i != greedy.antecedent[j] && std::isfinite(ps.pairs[j][i])) swaps.push_back({top - ps.pairs[j][i], j, i});
    }
    if (greedy.antecedent[j] != kEpsilon) swaps.push_back({top - ps.epsilon[j], j, kEpsilon});
  }
  // kEpsilon is the largest index, so plain tuple order puts it last.
  std::sort(swaps.begin(), swaps.end(), [](const Swap& a, const Swap& b) {
    return std::tie(a.gap, a.j, a.i) < std::tie(b.gap, b.j, b.i);
  });
  for (const Swap& s : swaps) {
    if (list.size() >= k) break;
    AntecedentTree t = greedy;
    t.antecedent[s.j] = s.i;
    if (seen.insert(t.partition()).second) list.push_back({t, base_score(ps, t), false});
  }
  const Candidate last = list.back();
  while (list.size() < k) list.push_back({last.tree, last.base_score, true});
  return list;
}

void inject(std::vector<Candidate>& list, const PairScores& ps, const AntecedentTree& tree) {
  if (list.empty()) throw ContractError("inject: empty list");
  const auto p = tree.partition();
  for (const Candidate& c : list) {
    if (!c.padding && c.tree.partition() == p) return;
  }
  list.back() = {tree, base_score(ps, tree), false};
}

eval::CorefPartition to_partition(const PairScores& ps, const AntecedentTree& tree) {
  if (tree.antecedent.size() != ps.size()) {
    throw ContractError("to_partition: tree has " + std::to_string(tree.antecedent.size()) + " mentions, scores " +
                        std::to_string(ps.size()));
  }
  return {ps.mentions, tree.partition()};
}

std::vector<entity::EntityAnnotation> to_annotations(const PairScores& ps, const AntecedentTree& tree,
                                                     std::size_t length, std::size_t max_length) {
  const eval::CorefPartition p = to_partition(ps, tree);
  std::map<std::size_t, std::size_t> size;
  for (std::size_t c : p.cluster) ++size[c];
  std::vector<entity::MentionSpan> spans;
  for (std::size_t j = 0; j < p.mentions.size(); ++j) {
    if (size[p.cluster[j]] < 2) continue;
    spans.push_back({p.mentions[j].first, p.mentions[j].second, p.cluster[j] + 1});
  }
  return entity::annotate(length, std::move(spans), max_length);
}

std::vector<RankedCandidate> rerank(const model::ModelParams& params, const std::vector<std::size_t>& tokens,
                                    const PairScores& ps, const std::vector<Candidate>& list,
                                    const RerankOptions& options) {
  std::vector<RankedCandidate> out(list.size());
  for (std::size_t n = 0; n < list.size(); ++n) {
    RankedCandidate& r = out[n];
    r.original_index = n;
    r.base_score = list[n].base_score;
    try {
      const auto ann = to_annotations(ps, list[n].tree, tokens.size(), params.config.max_mention_length);
      r.log_prob = model::doc_log_prob(params, tokens, ann, {model::NoiseMode::kMean, 0, 0.0, 0}).total;
    } catch (const ContractError& e) {
      r.valid = false;
      r.error = e.what();
      r.log_prob = kNegInf;
    }
    r.score = options.mode == Mode::kLmOnly ? r.log_prob
                                            : options.alpha * r.log_prob + options.beta * r.base_score;
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.valid != b.valid) return a.valid;
    return a.score > b.score;
  });
  return out;
}

PairScores synth_pair_scores(const std::string& doc_id, const eval::CorefPartition& gold, double signal,
                             double noise, std::uint64_t seed) {
  PairScores ps = PairScores::empty(doc_id, gold.mentions);
  Rng rng(seed);
  std::set<std::size_t> started;
  for (std::size_t j = 0; j < ps.size(); ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      const double base = gold.cluster[i] == gold.cluster[j] ? signal : 0.0;
      ps.pairs[j][i] = base + noise * standard_normal(rng);
    }
    const bool initial = started.insert(gold.cluster[j]).second;
    ps.epsilon[j] = (initial ? signal / 2.0 : 0.0) + noise * standard_normal(rng);
  }
  ps.validate();
  return ps;
}

AntecedentTree gold_tree(const eval::CorefPartition& gold) {
  AntecedentTree t;
  t.antecedent.assign(gold.mentions.size(), kEpsilon);
  std::map<std::size_t, std::size_t> last;
  for (std::size_t j = 0; j < gold.mentions.size(); ++j) {
    auto it = last.find(gold.cluster[j]);
    if (it != last.end()) t.antecedent[j] = it->second;
    last[gold.cluster[j]] = j;
  }
  return t;
}

}  // namespace enlm::rerank
