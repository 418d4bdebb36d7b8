#include "entitynlm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "entitynlm/error.hpp"

namespace enlm {

namespace {

constexpr char kMagic[8] = {'E', 'N', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  template <class T>
  T get() {
    T v{};
    take(&v, sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > bytes_.size() - pos_) fail("string length out of range");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void take(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) fail("truncated");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw IngestionError("checkpoint " + origin_ + ": " + what);
  }
  const std::string& origin() const { return origin_; }

 private:
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const model::ModelParams& params, const corpus::Vocabulary& vocab) {
  params.validate();
  if (vocab.size() != params.config.vocab_size) {
    throw ContractError("checkpoint: vocabulary has " + std::to_string(vocab.size()) + " words, model " +
                        std::to_string(params.config.vocab_size));
  }
  const model::ModelConfig& c = params.config;
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  for (std::size_t v : {c.vocab_size, c.word_dim, c.hidden_dim, c.effective_entity_dim(), c.num_classes,
                        c.max_mention_length}) {
    w.put<std::uint64_t>(v);
  }
  w.put<double>(c.sigma);
  w.put<std::uint8_t>(c.entity_blind ? 1 : 0);
  w.put<std::uint8_t>(c.proposal_heads ? 1 : 0);
  w.put<std::uint64_t>(vocab.hash());
  w.put<std::uint64_t>(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    w.put_string(vocab.word(i));
    w.put<std::uint64_t>(vocab.counts()[i]);
  }
  for (std::size_t cls : params.cfsm.classes.assignment()) w.put<std::uint32_t>(static_cast<std::uint32_t>(cls));
  const auto tensors = params.tensors();
  w.put<std::uint64_t>(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.put_string(name);
    w.put<std::uint64_t>(t->rank());
    for (std::size_t d : t->shape()) w.put<std::uint64_t>(d);
    w.raw(t->data().data(), t->size() * sizeof(double));
  }
  return w.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  char magic[sizeof(kMagic)];
  r.take(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) r.fail("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  model::ModelConfig c;
  c.vocab_size = r.get<std::uint64_t>();
  c.word_dim = r.get<std::uint64_t>();
  c.hidden_dim = r.get<std::uint64_t>();
  c.entity_dim = r.get<std::uint64_t>();
  c.num_classes = r.get<std::uint64_t>();
  c.max_mention_length = r.get<std::uint64_t>();
  c.sigma = r.get<double>();
  c.entity_blind = r.get<std::uint8_t>() != 0;
  c.proposal_heads = r.get<std::uint8_t>() != 0;
  const auto stored_hash = r.get<std::uint64_t>();
  const auto n_words = r.get<std::uint64_t>();
  if (n_words != c.vocab_size) r.fail("vocabulary size disagrees with configuration");
  std::vector<std::string> words(n_words);
  std::vector<std::uint64_t> counts(n_words);
  for (std::size_t i = 0; i < n_words; ++i) {
    words[i] = r.get_string();
    counts[i] = r.get<std::uint64_t>();
  }
  corpus::Vocabulary vocab = corpus::Vocabulary::from_words(std::move(words), std::move(counts));
  if (vocab.hash() != stored_hash) r.fail("vocabulary hash mismatch");
  std::vector<std::size_t> classes(n_words);
  for (std::size_t& cls : classes) cls = r.get<std::uint32_t>();

  model::ModelParams params;
  try {
    params = model::ModelParams::zeros(c, nn::ClassMap(std::move(classes)));
  } catch (const Error& e) {
    r.fail(std::string("inconsistent configuration: ") + e.what());
  }
  auto tensors = params.tensors();
  if (r.get<std::uint64_t>() != tensors.size()) r.fail("tensor count mismatch");
  for (model::NamedTensor& nt : tensors) {
    const std::string name = r.get_string();
    if (name != nt.name) r.fail("expected tensor '" + nt.name + "', found '" + name + "'");
    Shape shape(r.get<std::uint64_t>());
    for (std::size_t& d : shape) d = r.get<std::uint64_t>();
    if (shape != nt.tensor->shape()) {
      throw DimensionError("checkpoint " + origin + ": tensor '" + name + "' has shape " + shape_string(shape) +
                           ", configuration implies " + shape_string(nt.tensor->shape()));
    }
    r.take(nt.tensor->data().data(), nt.tensor->size() * sizeof(double));
  }
  if (!r.done()) r.fail("trailing bytes");
  return {std::move(params), std::move(vocab)};
}

void save_checkpoint(const std::string& path, const model::ModelParams& params, const corpus::Vocabulary& vocab) {
  const std::string bytes = serialize_checkpoint(params, vocab);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("write failed for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), "'" + path + "'");
}

}  // namespace enlm
