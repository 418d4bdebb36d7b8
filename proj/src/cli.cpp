#include "entitynlm/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "entitynlm/checkpoint.hpp"
#include "entitynlm/corpus.hpp"
#include "entitynlm/error.hpp"
#include "entitynlm/eval.hpp"
#include "entitynlm/kernels.hpp"
#include "entitynlm/rerank.hpp"
#include "entitynlm/train.hpp"

namespace enlm::cli {

namespace {

using nlohmann::json;

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return corpus::fnv1a(bytes.data(), bytes.size());
}

json report_header(const std::string& command) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = command;
  return j;
}

void emit(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot write '" + path + "'");
  f << j.dump(2) << '\n';
}

std::vector<corpus::RawDocument> load_raw(const std::string& path) {
  std::vector<corpus::RawDocument> docs = corpus::read_jsonl(path);
  for (corpus::RawDocument& d : docs) d = corpus::preprocess(d);
  return docs;
}

std::vector<corpus::EncodedDocument> encode_all(const std::vector<corpus::RawDocument>& docs,
                                                const corpus::Vocabulary& vocab, std::size_t max_length) {
  std::vector<corpus::EncodedDocument> out;
  out.reserve(docs.size());
  for (const corpus::RawDocument& d : docs) out.push_back(corpus::encode(d, vocab, max_length));
  return out;
}

std::vector<corpus::EncodedDocument> encode_cached(const std::vector<corpus::RawDocument>& docs,
                                                   const corpus::Vocabulary& vocab, std::size_t max_length,
                                                   const std::string& cache) {
  if (cache.empty()) return encode_all(docs, vocab, max_length);
  const std::uint64_t ckey = corpus::corpus_hash(docs) ^ (max_length * 0x9e3779b97f4a7c15ULL);
  if (auto hit = corpus::load_cache(cache, ckey, vocab.hash())) return *hit;
  auto encoded = encode_all(docs, vocab, max_length);
  corpus::save_cache(cache, encoded, ckey, vocab.hash());
  return encoded;
}

train::TrainConfig load_config(const std::string& explicit_path, const std::vector<std::string>& overrides) {
  std::string path = explicit_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  train::TrainConfig cfg = path.empty() ? train::TrainConfig{} : train::TrainConfig::load(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

eval::CorefPartition gold_partition(const corpus::EncodedDocument& doc) {
  eval::CorefPartition p;
  for (const entity::MentionSpan& s : corpus::decode(doc)) {
    p.mentions.push_back({s.start, s.end});
    p.cluster.push_back(s.entity);
  }
  return p;
}

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::size_t workers = 1;
  std::string out;
  std::string report;
  std::string model;
  std::string data;
  std::string train_path;
  std::string dev_path;
  std::string log_path;
  std::string cache;
  std::string scores;
  std::size_t samples = 100;
  bool mean_noise = false;
  std::size_t skip_sentences = 3;
  std::size_t max_predictions = 30;
  std::size_t k = 100;
  std::string mode = "lm";
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t count = 10;
  std::size_t max_len = 200;
  corpus::SynthSpec synth;
  std::string pair_scores;
  double signal = 2.0;
  double noise = 1.0;
};

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  train::TrainConfig cfg = load_config(o.config, o.overrides);
  if (o.seed_set) cfg.seed = o.seed;
  cfg.validate();
  const auto train_raw = load_raw(o.train_path);
  const corpus::Vocabulary vocab = corpus::Vocabulary::build(train_raw, cfg.min_count);
  const auto train_docs = encode_cached(train_raw, vocab, cfg.max_mention_length, o.cache);
  std::vector<corpus::EncodedDocument> dev_docs;
  if (!o.dev_path.empty()) dev_docs = encode_all(load_raw(o.dev_path), vocab, cfg.max_mention_length);

  std::ofstream log_file;
  if (!o.log_path.empty()) {
    log_file.open(o.log_path);
    if (!log_file) throw IngestionError("cannot write log '" + o.log_path + "'");
  }
  std::ostream& log = o.log_path.empty() ? err : log_file;
  const train::TrainResult result = train::train(cfg, vocab, train_docs, dev_docs, [&](const train::EpochLog& e) {
    log << train::format_epoch(e) << std::endl;
  });
  save_checkpoint(o.out, result.params, vocab);

  json j = report_header("train");
  j["checkpoint"] = o.out;
  j["checkpoint_hash"] = hex(file_hash(o.out));
  j["vocab_size"] = vocab.size();
  j["vocab_hash"] = hex(vocab.hash());
  j["best_epoch"] = result.best_epoch;
  j["epochs_run"] = result.history.size();
  j["seed"] = cfg.seed;
  j["config"] = cfg.to_string();
  json hist = json::array();
  for (const auto& e : result.history) {
    hist.push_back({{"epoch", e.epoch}, {"mean_objective", e.mean_objective}, {"dev_perplexity", e.dev_perplexity}});
  }
  j["history"] = hist;
  emit(j, o.report, out);
  return kOk;
}

int cmd_eval_lm(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.model);
  const auto docs = encode_all(load_raw(o.data), ck.vocab, ck.params.config.max_mention_length);
  const auto noise = o.mean_noise ? model::NoiseMode::kMean : model::NoiseMode::kSampled;
  const eval::PerplexityReport rep = eval::perplexity_is(ck.params, docs, o.samples, o.seed, noise, o.workers);
  json j = report_header("eval-lm");
  j["metric"] = "perplexity";
  j["value"] = rep.perplexity;
  j["total_log_prob"] = rep.total_log_prob;
  j["tokens"] = rep.tokens;
  j["documents"] = docs.size();
  j["samples"] = o.samples;
  j["seed"] = o.seed;
  j["noise"] = o.mean_noise ? "mean" : "sampled";
  j["model_hash"] = hex(file_hash(o.model));
  std::vector<double> ess = rep.doc_ess;
  std::sort(ess.begin(), ess.end());
  j["min_ess"] = ess.empty() ? 0.0 : ess.front();
  j["median_ess"] = ess.empty() ? 0.0 : ess[ess.size() / 2];
  if (ck.params.config.entity_blind) j["exact_value"] = eval::perplexity_exact_blind(ck.params, docs).perplexity;
  emit(j, o.out, out);
  return kOk;
}

int cmd_eval_entity(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.model);
  const auto docs = encode_all(load_raw(o.data), ck.vocab, ck.params.config.max_mention_length);
  const eval::PredictionProtocol protocol{o.skip_sentences, o.max_predictions};
  const eval::PredictionResult model_res = eval::entity_prediction(ck.params, docs, protocol);
  const eval::PredictionResult base = eval::always_new_baseline(docs, protocol);
  json j = report_header("eval-entity");
  j["metric"] = "entity_accuracy";
  j["value"] = model_res.accuracy();
  j["correct"] = model_res.correct;
  j["total"] = model_res.total;
  j["baseline"] = {{"metric", "always_new_accuracy"}, {"value", base.accuracy()}, {"correct", base.correct},
                   {"total", base.total}};
  j["skip_sentences"] = o.skip_sentences;
  j["max_predictions"] = o.max_predictions;
  j["model_hash"] = hex(file_hash(o.model));
  emit(j, o.out, out);
  return kOk;
}

int cmd_rerank(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.model);
  const auto docs = encode_all(load_raw(o.data), ck.vocab, ck.params.config.max_mention_length);
  std::map<std::string, const corpus::EncodedDocument*> by_id;
  for (const auto& d : docs) by_id[d.id] = &d;
  const auto scores = rerank::read_pair_scores_file(o.scores);
  if (o.mode != "lm" && o.mode != "combined") throw ConfigError("rerank: --mode must be lm or combined");
  const rerank::RerankOptions ropt{o.mode == "lm" ? rerank::Mode::kLmOnly : rerank::Mode::kCombined, o.alpha,
                                   o.beta};

  std::ofstream decisions;
  if (!o.out.empty()) {
    decisions.open(o.out, std::ios::binary);
    if (!decisions) throw IngestionError("cannot write '" + o.out + "'");
  }
  double base_sum = 0.0;
  double rerank_sum = 0.0;
  std::size_t scored = 0;
  std::size_t skipped_candidates = 0;
  for (const rerank::PairScores& ps : scores) {
    auto it = by_id.find(ps.doc_id);
    if (it == by_id.end()) throw IngestionError("rerank: no document '" + ps.doc_id + "' in " + o.data);
    const corpus::EncodedDocument& doc = *it->second;
    const auto list = rerank::kbest(ps, o.k);
    const auto ranked = rerank::rerank(ck.params, doc.tokens, ps, list, ropt);
    const rerank::AntecedentTree& best = list[ranked.front().original_index].tree;
    json line;
    line["id"] = ps.doc_id;
    json ants = json::array();
    for (std::size_t a : best.antecedent) {
      if (a == rerank::kEpsilon) {
        ants.push_back(nullptr);
      } else {
        ants.push_back(a);
      }
    }
    line["antecedents"] = ants;
    line["clusters"] = best.partition();
    json log = json::array();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      json entry = {{"rank", r + 1},
                    {"candidate", ranked[r].original_index},
                    {"base_score", ranked[r].base_score},
                    {"padding", list[ranked[r].original_index].padding}};
      if (ranked[r].valid) {
        entry["log_prob"] = ranked[r].log_prob;
      } else {
        entry["log_prob"] = nullptr;
        entry["error"] = ranked[r].error;
        ++skipped_candidates;
      }
      log.push_back(entry);
    }
    line["ranking"] = log;
    if (decisions.is_open()) decisions << line.dump() << '\n';

    const eval::CorefPartition gold = gold_partition(doc);
    std::set<eval::Mention> gm(gold.mentions.begin(), gold.mentions.end());
    std::set<eval::Mention> sm(ps.mentions.begin(), ps.mentions.end());
    if (!gold.mentions.empty() && gm == sm) {
      base_sum += eval::conll2(gold, rerank::to_partition(ps, list.front().tree));
      rerank_sum += eval::conll2(gold, rerank::to_partition(ps, best));
      ++scored;
    }
  }
  json j = report_header("rerank");
  j["documents"] = scores.size();
  j["k"] = o.k;
  j["mode"] = o.mode;
  j["alpha"] = o.alpha;
  j["beta"] = o.beta;
  j["invalid_candidates"] = skipped_candidates;
  j["gold_scored_documents"] = scored;
  if (scored > 0) {
    j["conll2_base"] = base_sum / static_cast<double>(scored);
    j["conll2_reranked"] = rerank_sum / static_cast<double>(scored);
  }
  j["model_hash"] = hex(file_hash(o.model));
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_sample(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.model);
  Rng rng(o.seed);
  std::vector<corpus::RawDocument> docs;
  for (std::size_t n = 0; n < o.count; ++n) {
    const model::SampledDocument s =
        model::sample_document(ck.params, o.max_len, corpus::Vocabulary::kEnd, rng);
    corpus::RawDocument d;
    d.id = "sample-" + std::to_string(n);
    d.sentences.emplace_back();
    for (std::size_t w : s.tokens) d.sentences[0].push_back(ck.vocab.word(w));
    for (const entity::MentionSpan& m : entity::spans_of(s.annotations)) {
      d.mentions.push_back({"e" + std::to_string(m.entity), 0, m.start, m.end});
    }
    docs.push_back(std::move(d));
  }
  if (o.out.empty()) {
    for (const auto& d : docs) out << corpus::to_json_line(d) << '\n';
  } else {
    corpus::write_jsonl(o.out, docs);
  }
  return kOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  const auto docs = corpus::synth_corpus(o.synth, o.seed);
  corpus::write_jsonl(o.out, docs);
  if (!o.pair_scores.empty()) {
    std::ofstream ps_out(o.pair_scores, std::ios::binary);
    if (!ps_out) throw IngestionError("cannot write '" + o.pair_scores + "'");
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const corpus::RawDocument pre = corpus::preprocess(docs[i]);
      // Token offsets only; the vocabulary does not matter here.
      const corpus::EncodedDocument enc = corpus::encode(pre, corpus::Vocabulary{});
      const eval::CorefPartition gold = gold_partition(enc);
      if (gold.mentions.empty()) continue;
      rerank::write_pair_scores(
          ps_out, rerank::synth_pair_scores(pre.id, gold, o.signal, o.noise, derive_seed(o.seed, 7, i)));
    }
  }
  json j = report_header("synth");
  j["documents"] = docs.size();
  j["corpus_hash"] = hex(corpus::corpus_hash(docs));
  j["expected_entities_per_doc"] = corpus::expected_entities(o.synth);
  j["seed"] = o.seed;
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.model);
  const model::ModelConfig& c = ck.params.config;
  json j = report_header("inspect");
  j["model_hash"] = hex(file_hash(o.model));
  j["config"] = {{"vocab_size", c.vocab_size},       {"word_dim", c.word_dim},
                 {"hidden_dim", c.hidden_dim},       {"entity_dim", c.effective_entity_dim()},
                 {"num_classes", c.num_classes},     {"max_mention_length", c.max_mention_length},
                 {"sigma", c.sigma},                 {"entity_blind", c.entity_blind},
                 {"proposal_heads", c.proposal_heads}};
  j["vocab_hash"] = hex(ck.vocab.hash());
  json words = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(20, ck.vocab.size()); ++i) words.push_back(ck.vocab.word(i));
  j["top_words"] = words;
  json tensors = json::array();
  for (const auto& [name, t] : ck.params.tensors()) {
    double sq = 0.0;
    for (double v : t->data()) sq += v * v;
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"l2_norm", std::sqrt(sq)}});
  }
  j["tensors"] = tensors;
  j["kernels"] = kernels::isa_name(kernels::active().isa);
  out << j.dump(2) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Entity-aware neural language model"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 1;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Random seed"); };

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", o.config, std::string("key=value config (default: $") + kConfigEnv + ")");
  train->add_option("--set", o.overrides, "Config override key=value (repeatable; wins over the file)");
  train->add_option("--train", o.train_path, "Training corpus (JSONL)")->required();
  train->add_option("--dev", o.dev_path, "Development corpus (JSONL) for early stopping");
  train->add_option("--out", o.out, "Checkpoint path")->required();
  train->add_option("--log", o.log_path, "Epoch log path (default: stderr)");
  train->add_option("--report", o.report, "Report path (default: stdout)");
  train->add_option("--cache", o.cache, "Encoded-corpus cache file");
  add_seed(train);

  auto* eval_lm = app.add_subcommand("eval-lm", "Importance-sampled perplexity");
  eval_lm->add_option("--model", o.model, "Checkpoint")->required();
  eval_lm->add_option("--data", o.data, "Corpus (JSONL)")->required();
  eval_lm->add_option("--samples", o.samples, "Proposal samples per document")->capture_default_str();
  eval_lm->add_flag("--mean-embeddings", o.mean_noise, "Fix new-entity embeddings at normalize(r_1)");
  eval_lm->add_option("--workers", o.workers, "Parallel documents")->capture_default_str();
  eval_lm->add_option("--out", o.out, "Report path (default: stdout)");
  add_seed(eval_lm);

  auto* eval_entity = app.add_subcommand("eval-entity", "Entity prediction accuracy");
  eval_entity->add_option("--model", o.model, "Checkpoint")->required();
  eval_entity->add_option("--data", o.data, "Annotated corpus (JSONL)")->required();
  eval_entity->add_option("--skip-sentences", o.skip_sentences, "Leading sentences without predictions")
      ->capture_default_str();
  eval_entity->add_option("--max-predictions", o.max_predictions, "Predictions per document")
      ->capture_default_str();
  eval_entity->add_option("--out", o.out, "Report path (default: stdout)");
  add_seed(eval_entity);

  auto* rr = app.add_subcommand("rerank", "Rerank k-best antecedent trees");
  rr->add_option("--model", o.model, "Checkpoint")->required();
  rr->add_option("--data", o.data, "Corpus (JSONL) with the documents' words")->required();
  rr->add_option("--scores", o.scores, "Pair-score file")->required();
  rr->add_option("--k", o.k, "Candidate list length")->capture_default_str();
  rr->add_option("--mode", o.mode, "lm or combined")->capture_default_str();
  rr->add_option("--alpha", o.alpha, "Weight of log P in combined mode")->capture_default_str();
  rr->add_option("--beta", o.beta, "Weight of the base score in combined mode")->capture_default_str();
  rr->add_option("--out", o.out, "Per-document decisions (JSONL)");
  add_seed(rr);

  auto* sample = app.add_subcommand("sample", "Generate annotated documents");
  sample->add_option("--model", o.model, "Checkpoint")->required();
  sample->add_option("--count", o.count, "Documents")->capture_default_str();
  sample->add_option("--max-len", o.max_len, "Token limit per document")->capture_default_str();
  sample->add_option("--out", o.out, "Output JSONL (default: stdout)");
  add_seed(sample);

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  synth->add_option("--out", o.out, "Output JSONL")->required();
  synth->add_option("--docs", o.synth.num_docs, "Documents")->capture_default_str();
  synth->add_option("--sentences", o.synth.sentences_per_doc, "Sentences per document")->capture_default_str();
  synth->add_option("--vocab", o.synth.vocab_size, "Target vocabulary size")->capture_default_str();
  synth->add_option("--recurrence", o.synth.recurrence_rate, "Re-mention probability")->capture_default_str();
  synth->add_option("--recency", o.synth.recency, "Probability a re-mention is the most recent entity")
      ->capture_default_str();
  synth->add_option("--names", o.synth.num_names, "Name pool size (0: vocab/10)");
  synth->add_option("--roles", o.synth.num_roles, "Role pool size (0: vocab/30)");
  synth->add_flag("--cue-words", o.synth.cue_words, "Open sentences with new/old cue words");
  synth->add_option("--max-entities", o.synth.max_entities, "Entity cap per document (0: none)")
      ->capture_default_str();
  synth->add_option("--pair-scores", o.pair_scores, "Also write gold-informed pair scores here");
  synth->add_option("--signal", o.signal, "Pair-score signal")->capture_default_str();
  synth->add_option("--noise", o.noise, "Pair-score noise")->capture_default_str();
  add_seed(synth);

  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
  inspect->add_option("--model", o.model, "Checkpoint")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    const CLI::Option* opt = sub->get_option_no_throw("--seed");
    if (opt != nullptr && opt->count() > 0) o.seed_set = true;
  }
  o.seed = seed;

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval_lm->parsed()) return cmd_eval_lm(o, out);
    if (eval_entity->parsed()) return cmd_eval_entity(o, out);
    if (rr->parsed()) return cmd_rerank(o, out);
    if (sample->parsed()) return cmd_sample(o, out);
    if (synth->parsed()) return cmd_synth(o, out);
    if (inspect->parsed()) return cmd_inspect(o, out);
  } catch (const ConfigError& e) {
    err << stage << ": configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const IngestionError& e) {
    err << stage << ": ingestion error: " << e.what() << '\n';
    return kIngestion;
  } catch (const NumericalError& e) {
    err << stage << ": numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << stage << ": " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace enlm::cli
