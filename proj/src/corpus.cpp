#include "entitynlm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "entitynlm/error.hpp"
#include "entitynlm/rng.hpp"

namespace enlm::corpus {

namespace {

using nlohmann::json;

std::string span_text(const RawDocument& doc, const RawMention& m) {
  return "document '" + doc.id + "' mention '" + m.entity + "' sentence " + std::to_string(m.sentence) + " [" +
         std::to_string(m.start) + "," + std::to_string(m.end) + "]";
}

void validate_spans(const RawDocument& doc) {
  for (const RawMention& m : doc.mentions) {
    if (m.sentence >= doc.sentences.size() || m.start > m.end || m.end >= doc.sentences[m.sentence].size()) {
      throw IngestionError("malformed span: " + span_text(doc, m));
    }
  }
}

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool before(const RawMention& a, const RawMention& b) {
  if (a.sentence != b.sentence) return a.sentence < b.sentence;
  if (a.start != b.start) return a.start < b.start;
  return a.end > b.end;  // longer first, so enclosing spans win
}

}  // namespace

bool is_number(const std::string& token) {
  static const std::regex pattern(R"([+-]?(\d+([.,]\d+)*|\d*\.\d+))");
  return std::regex_match(token, pattern);
}

bool is_punctuation(const std::string& token) {
  if (token.empty()) return false;
  return std::all_of(token.begin(), token.end(),
                     [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; });
}

RawDocument preprocess(const RawDocument& doc, const PreprocessPolicy& policy) {
  validate_spans(doc);
  RawDocument out;
  out.id = doc.id;

  std::vector<RawMention> sorted = doc.mentions;
  std::stable_sort(sorted.begin(), sorted.end(), before);
  std::vector<RawMention> kept;
  for (const RawMention& m : sorted) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const RawMention& k) {
      return k.sentence == m.sentence && m.start <= k.end && k.start <= m.end;
    });
    if (!overlaps) kept.push_back(m);
  }

  if (policy.drop_singletons) {
    std::map<std::string, std::size_t> count;
    for (const RawMention& m : kept) ++count[m.entity];
    std::erase_if(kept, [&](const RawMention& m) { return count[m.entity] < 2; });
  }

  // Per sentence: keep mask and new offsets.
  std::vector<std::vector<std::size_t>> new_index(doc.sentences.size());
  out.sentences.resize(doc.sentences.size());
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    const auto& sent = doc.sentences[s];
    std::vector<bool> in_mention(sent.size(), false);
    for (const RawMention& m : kept) {
      if (m.sentence != s) continue;
      for (std::size_t i = m.start; i <= m.end; ++i) in_mention[i] = true;
    }
    new_index[s].assign(sent.size(), 0);
    for (std::size_t i = 0; i < sent.size(); ++i) {
      std::string tok = policy.lowercase ? to_lower(sent[i]) : sent[i];
      new_index[s][i] = out.sentences[s].size();
      if (policy.strip_punctuation && !in_mention[i] && is_punctuation(tok)) continue;
      if (policy.replace_numbers && is_number(tok)) tok = kNumToken;
      out.sentences[s].push_back(std::move(tok));
    }
  }
  for (const RawMention& m : kept) {
    out.mentions.push_back({m.entity, m.sentence, new_index[m.sentence][m.start], new_index[m.sentence][m.end]});
  }
  return out;
}

Vocabulary::Vocabulary() {
  words_ = {"<unk>", kNumToken, "<eod>"};
  counts_ = {0, 0, 0};
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<RawDocument>& docs, std::size_t min_count) {
  if (docs.empty()) throw IngestionError("vocabulary: empty corpus");
  Vocabulary v;
  std::map<std::string, std::uint64_t> freq;
  for (const RawDocument& d : docs) {
    for (const auto& sent : d.sentences) {
      for (const std::string& tok : sent) ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (const auto& [w, n] : freq) {
    auto it = v.index_.find(w);
    if (it != v.index_.end()) {
      v.counts_[it->second] += n;
    } else if (n >= min_count) {
      entries.emplace_back(w, n);
    } else {
      v.counts_[kUnk] += n;
    }
  }
  // freq is a std::map, so a stable sort by count leaves ties lexicographic.
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [w, n] : entries) {
    v.index_[w] = v.words_.size();
    v.words_.push_back(w);
    v.counts_.push_back(n);
  }
  v.counts_[kEnd] = docs.size();
  return v;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, std::vector<std::uint64_t> counts) {
  Vocabulary ref;
  if (words.size() < kReserved || words.size() != counts.size() ||
      !std::equal(ref.words_.begin(), ref.words_.end(), words.begin())) {
    throw IngestionError("vocabulary: stored word list is missing the reserved entries");
  }
  Vocabulary v;
  v.words_ = std::move(words);
  v.counts_ = std::move(counts);
  v.index_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], i).second) {
      throw IngestionError("vocabulary: duplicate word '" + v.words_[i] + "'");
    }
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) {
    throw VocabularyError("vocabulary: id " + std::to_string(id) + " outside " + std::to_string(words_.size()));
  }
  return words_[id];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const std::string& w : words_) {
    h = fnv1a(w.data(), w.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

EncodedDocument encode(const RawDocument& doc, const Vocabulary& vocab, std::size_t max_length,
                       bool append_end) {
  validate_spans(doc);
  EncodedDocument out;
  out.id = doc.id;
  std::vector<std::size_t> offset;
  for (const auto& sent : doc.sentences) {
    offset.push_back(out.tokens.size());
    out.sentence_starts.push_back(out.tokens.size());
    for (const std::string& tok : sent) out.tokens.push_back(vocab.id(tok));
  }
  std::map<std::string, std::size_t> ids;
  std::vector<entity::MentionSpan> spans;
  for (const RawMention& m : doc.mentions) {
    const std::size_t id = ids.emplace(m.entity, ids.size() + 1).first->second;
    spans.push_back({offset[m.sentence] + m.start, offset[m.sentence] + m.end, id});
  }
  try {
    out.annotations = entity::annotate(out.tokens.size(), std::move(spans), max_length);
  } catch (const ContractError& e) {
    throw ContractError("encode: document '" + doc.id + "': " + e.what());
  }
  if (append_end) {
    out.tokens.push_back(Vocabulary::kEnd);
    out.annotations.push_back(entity::EntityAnnotation::outside());
  }
  return out;
}

std::vector<entity::MentionSpan> decode(const EncodedDocument& doc) { return entity::spans_of(doc.annotations); }

RawDocument parse_document(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw IngestionError(std::string("document: invalid JSON: ") + e.what());
  }
  RawDocument d;
  try {
    if (!j.is_object()) throw IngestionError("document: expected a JSON object");
    d.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    d.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
    if (j.contains("mentions")) {
      for (const json& m : j.at("mentions")) {
        RawMention rm;
        rm.entity = m.at("entity").is_string() ? m.at("entity").get<std::string>() : m.at("entity").dump();
        rm.sentence = m.at("sentence").get<std::size_t>();
        rm.start = m.at("start").get<std::size_t>();
        rm.end = m.at("end").get<std::size_t>();
        d.mentions.push_back(rm);
      }
    }
  } catch (const json::exception& e) {
    throw IngestionError("document '" + d.id + "': " + e.what());
  }
  validate_spans(d);
  return d;
}

std::string to_json_line(const RawDocument& doc) {
  json j;
  j["id"] = doc.id;
  j["sentences"] = doc.sentences;
  j["mentions"] = json::array();
  for (const RawMention& m : doc.mentions) {
    j["mentions"].push_back({{"entity", m.entity}, {"sentence", m.sentence}, {"start", m.start}, {"end", m.end}});
  }
  return j.dump();
}

std::vector<RawDocument> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open corpus '" + path + "'");
  std::vector<RawDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      docs.push_back(parse_document(line));
    } catch (const IngestionError& e) {
      throw IngestionError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

void write_jsonl(const std::string& path, const std::vector<RawDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write '" + path + "'");
  for (const RawDocument& d : docs) out << to_json_line(d) << '\n';
  if (!out) throw IngestionError("write failed for '" + path + "'");
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t corpus_hash(const std::vector<RawDocument>& docs) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const RawDocument& d : docs) {
    const std::string line = to_json_line(d);
    h = fnv1a(line.data(), line.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

namespace {

constexpr char kCacheMagic[8] = {'E', 'N', 'L', 'M', 'C', 'A', 'C', 'H'};
constexpr std::uint32_t kCacheVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IngestionError("cache '" + path + "' is truncated");
  return v;
}

}  // namespace

void save_cache(const std::string& path, const std::vector<EncodedDocument>& docs, std::uint64_t corpus_key,
                std::uint64_t vocab_key) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write cache '" + path + "'");
  out.write(kCacheMagic, sizeof(kCacheMagic));
  put<std::uint32_t>(out, kCacheVersion);
  put<std::uint64_t>(out, corpus_key);
  put<std::uint64_t>(out, vocab_key);
  put<std::uint64_t>(out, docs.size());
  for (const EncodedDocument& d : docs) {
    put<std::uint64_t>(out, d.id.size());
    out.write(d.id.data(), static_cast<std::streamsize>(d.id.size()));
    put<std::uint64_t>(out, d.tokens.size());
    for (std::size_t t = 0; t < d.tokens.size(); ++t) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d.tokens[t]));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(d.annotations[t].r));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d.annotations[t].e));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d.annotations[t].l));
    }
    put<std::uint64_t>(out, d.sentence_starts.size());
    for (std::size_t s : d.sentence_starts) put<std::uint64_t>(out, s);
  }
  if (!out) throw IngestionError("write failed for cache '" + path + "'");
}

std::optional<std::vector<EncodedDocument>> load_cache(const std::string& path, std::uint64_t corpus_key,
                                                       std::uint64_t vocab_key) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[sizeof(kCacheMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
    throw IngestionError("'" + path + "' is not an encoded-corpus cache");
  }
  if (get<std::uint32_t>(in, path) != kCacheVersion) return std::nullopt;
  if (get<std::uint64_t>(in, path) != corpus_key) return std::nullopt;
  if (get<std::uint64_t>(in, path) != vocab_key) return std::nullopt;
  const auto n = get<std::uint64_t>(in, path);
  std::vector<EncodedDocument> docs(n);
  for (EncodedDocument& d : docs) {
    d.id.resize(get<std::uint64_t>(in, path));
    if (!in.read(d.id.data(), static_cast<std::streamsize>(d.id.size()))) {
      throw IngestionError("cache '" + path + "' is truncated");
    }
    const auto len = get<std::uint64_t>(in, path);
    d.tokens.resize(len);
    d.annotations.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      d.tokens[t] = get<std::uint32_t>(in, path);
      d.annotations[t].r = get<std::uint8_t>(in, path);
      d.annotations[t].e = get<std::uint32_t>(in, path);
      d.annotations[t].l = get<std::uint32_t>(in, path);
    }
    d.sentence_starts.resize(get<std::uint64_t>(in, path));
    for (std::size_t& s : d.sentence_starts) s = get<std::uint64_t>(in, path);
  }
  return docs;
}

namespace {

struct SynthLexicon {
  std::vector<std::string> names, roles, verbs, objects;
};

SynthLexicon lexicon(const SynthSpec& spec) {
  SynthLexicon lex;
  const std::size_t vocab_size = spec.vocab_size;
  const std::size_t function_words = 5;
  const std::size_t roles = spec.num_roles > 0 ? spec.num_roles : std::max<std::size_t>(2, vocab_size / 30);
  const std::size_t names = spec.num_names > 0 ? spec.num_names : std::max<std::size_t>(4, vocab_size / 10);
  const std::size_t used = function_words + roles * 4 + names;
  const std::size_t objects = vocab_size > used + 2 ? vocab_size - used : 2;
  for (std::size_t i = 0; i < names; ++i) lex.names.push_back("name" + std::to_string(i));
  for (std::size_t i = 0; i < roles; ++i) lex.roles.push_back("role" + std::to_string(i));
  for (std::size_t i = 0; i < roles * 3; ++i) lex.verbs.push_back("verb" + std::to_string(i));
  for (std::size_t i = 0; i < objects; ++i) lex.objects.push_back("obj" + std::to_string(i));
  return lex;
}

std::size_t pick(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

}  // namespace

std::vector<RawDocument> synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.sentences_per_doc < 1) throw ConfigError("synth: sentences_per_doc must be >= 1");
  if (spec.recurrence_rate < 0.0 || spec.recurrence_rate > 1.0 || spec.recency < 0.0 || spec.recency > 1.0) {
    throw ConfigError("synth: rates must lie in [0, 1]");
  }
  const SynthLexicon lex = lexicon(spec);
  if (lex.names.size() < spec.sentences_per_doc) {
    throw ConfigError("synth: " + std::to_string(lex.names.size()) + " names cannot cover " +
                      std::to_string(spec.sentences_per_doc) + " entities per document");
  }
  std::vector<RawDocument> docs;
  docs.reserve(spec.num_docs);
  for (std::size_t d = 0; d < spec.num_docs; ++d) {
    Rng rng(derive_seed(seed, d));
    RawDocument doc;
    doc.id = "synth-" + std::to_string(d);
    struct Ent {
      std::size_t name;
      std::size_t role;
    };
    std::vector<Ent> ents;
    std::set<std::size_t> used_names;
    std::size_t recent = 0;
    for (std::size_t s = 0; s < spec.sentences_per_doc; ++s) {
      const bool capped = spec.max_entities > 0 && ents.size() >= spec.max_entities;
      const bool old = !ents.empty() && (capped || uniform01(rng) < spec.recurrence_rate);
      std::size_t k;
      if (old) {
        k = recent;
        if (ents.size() > 1 && uniform01(rng) >= spec.recency) {
          k = pick(rng, ents.size() - 1);
          if (k >= recent) ++k;
        }
      } else {
        std::size_t name = pick(rng, lex.names.size());
        while (used_names.count(name)) name = (name + 1) % lex.names.size();
        used_names.insert(name);
        ents.push_back({name, pick(rng, lex.roles.size())});
        k = ents.size() - 1;
      }
      recent = k;
      const Ent& e = ents[k];
      std::vector<std::string> sent;
      if (spec.cue_words) sent.push_back(old ? "then" : "suddenly");
      const std::size_t start = sent.size();
      if (!old) {
        sent.push_back("the");
        sent.push_back(lex.roles[e.role]);
      }
      sent.push_back(lex.names[e.name]);
      doc.mentions.push_back({"e" + std::to_string(k + 1), s, start, sent.size() - 1});
      sent.push_back(lex.verbs[e.role * 3 + pick(rng, 3)]);
      sent.push_back("the");
      sent.push_back(lex.objects[pick(rng, lex.objects.size())]);
      sent.push_back(".");
      doc.sentences.push_back(std::move(sent));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

double expected_entities(const SynthSpec& spec) {
  // dist[k] = P(k entities so far), after the first sentence.
  const std::size_t cap = spec.max_entities > 0 ? spec.max_entities : spec.sentences_per_doc;
  std::vector<double> dist(cap + 1, 0.0);
  dist[1] = 1.0;
  for (std::size_t s = 1; s < spec.sentences_per_doc; ++s) {
    std::vector<double> next(cap + 1, 0.0);
    for (std::size_t k = 1; k <= cap; ++k) {
      if (dist[k] == 0.0) continue;
      if (k == cap) {
        next[k] += dist[k];
      } else {
        next[k] += dist[k] * spec.recurrence_rate;
        next[k + 1] += dist[k] * (1.0 - spec.recurrence_rate);
      }
    }
    dist = std::move(next);
  }
  double mean = 0.0;
  for (std::size_t k = 1; k <= cap; ++k) mean += static_cast<double>(k) * dist[k];
  return mean;
}

}  // namespace enlm::corpus
