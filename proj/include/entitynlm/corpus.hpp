#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "entitynlm/entity_state.hpp"

namespace enlm::corpus {

struct RawMention {
  std::string entity;
  std::size_t sentence = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  friend bool operator==(const RawMention&, const RawMention&) = default;
};

struct RawDocument {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<RawMention> mentions;
  friend bool operator==(const RawDocument&, const RawDocument&) = default;
};

struct PreprocessPolicy {
  bool lowercase = true;
  bool strip_punctuation = true;
  bool replace_numbers = true;
  bool drop_singletons = true;
};

inline constexpr const char* kNumToken = "<num>";

bool is_number(const std::string& token);
bool is_punctuation(const std::string& token);

// Nested mentions keep only the enclosing span; a mention crossing an
// earlier kept span is dropped. Output mentions are sorted by position.
RawDocument preprocess(const RawDocument& doc, const PreprocessPolicy& policy = {});

class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kNum = 1;
  static constexpr std::size_t kEnd = 2;
  static constexpr std::size_t kReserved = 3;

  Vocabulary();
  // Words with count >= min_count get ids in order of count (descending),
  // then lexicographically. The rest map to kUnk.
  static Vocabulary build(const std::vector<RawDocument>& docs, std::size_t min_count);
  // Rebuild from a stored word list; ids follow list order.
  static Vocabulary from_words(std::vector<std::string> words, std::vector<std::uint64_t> counts);

  std::size_t size() const { return words_.size(); }
  std::size_t id(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  const std::string& word(std::size_t id) const;
  const std::vector<std::string>& words() const { return words_; }
  // Training-corpus frequency per id; kUnk accumulates dropped words and
  // kEnd counts documents.
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t hash() const;

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::map<std::string, std::size_t> index_;
};

struct EncodedDocument {
  std::string id;
  std::vector<std::size_t> tokens;
  std::vector<entity::EntityAnnotation> annotations;
  std::vector<std::size_t> sentence_starts;
  friend bool operator==(const EncodedDocument&, const EncodedDocument&) = default;
};

// Sentences are concatenated; entity ids renumber by first appearance. With
// append_end, a final end-of-document token outside any mention is added.
EncodedDocument encode(const RawDocument& doc, const Vocabulary& vocab,
                       std::size_t max_length = entity::kDefaultMaxLength, bool append_end = true);
std::vector<entity::MentionSpan> decode(const EncodedDocument& doc);

// One JSON object per line: {"id", "sentences": [[tok...]...],
// "mentions": [{"entity", "sentence", "start", "end"}...]}.
RawDocument parse_document(const std::string& line);
std::string to_json_line(const RawDocument& doc);
std::vector<RawDocument> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<RawDocument>& docs);

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t corpus_hash(const std::vector<RawDocument>& docs);

// Binary cache of encoded documents keyed by (corpus hash, vocab hash).
void save_cache(const std::string& path, const std::vector<EncodedDocument>& docs, std::uint64_t corpus_key,
                std::uint64_t vocab_key);
// nullopt when the file is missing or was written for other inputs.
std::optional<std::vector<EncodedDocument>> load_cache(const std::string& path, std::uint64_t corpus_key,
                                                       std::uint64_t vocab_key);

// Template narratives: one mention per sentence,
//   [cue] the <role> <name> <verb> the <object> .   (new entity)
//   [cue] <name> <verb> the <object> .              (re-mention)
// Verbs depend on the entity's role. With cue_words the sentence opens with
// "suddenly" before a new entity and "then" before a re-mention.
struct SynthSpec {
  std::size_t num_docs = 200;
  std::size_t sentences_per_doc = 8;
  std::size_t vocab_size = 300;
  // Probability that a mention after the first refers to an existing entity.
  double recurrence_rate = 0.6;
  // Probability that a re-mention picks the most recent entity; otherwise
  // the referent is uniform over the other entities.
  double recency = 0.5;
  bool cue_words = false;
  // 0 means unlimited. Once reached, every further mention is a re-mention.
  std::size_t max_entities = 0;
  // Lexicon pools; 0 derives them from vocab_size (names V/10, roles V/30).
  std::size_t num_names = 0;
  std::size_t num_roles = 0;
};

std::vector<RawDocument> synth_corpus(const SynthSpec& spec, std::uint64_t seed);
// Exact expected number of distinct entities per document under `spec`.
double expected_entities(const SynthSpec& spec);

}  // namespace enlm::corpus
