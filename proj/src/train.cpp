#include "entitynlm/train.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "entitynlm/error.hpp"

namespace enlm::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config: cannot parse '" + value + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: expected true/false for key '" + key + "', got '" + value + "'");
}

bool on_dim_grid(std::size_t d) {
  for (std::size_t g : {32, 48, 64, 128, 256}) {
    if (d == g) return true;
  }
  return false;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

double TrainConfig::effective_learning_rate() const {
  if (learning_rate) return *learning_rate;
  return optimizer == "adam" ? 0.001 : 0.1;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "optimizer") {
    if (value != "adagrad" && value != "adam") throw ConfigError("config: unknown optimizer '" + value + "'");
    optimizer = value;
  } else if (key == "learning_rate") {
    learning_rate = parse_number<double>(key, value);
  } else if (key == "dropout") {
    dropout = parse_number<double>(key, value);
  } else if (key == "word_dim") {
    word_dim = parse_number<std::size_t>(key, value);
  } else if (key == "hidden_dim") {
    hidden_dim = parse_number<std::size_t>(key, value);
  } else if (key == "entity_dim") {
    entity_dim = parse_number<std::size_t>(key, value);
  } else if (key == "epochs") {
    epochs = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "patience") {
    patience = parse_number<std::size_t>(key, value);
  } else if (key == "min_count") {
    min_count = parse_number<std::size_t>(key, value);
  } else if (key == "num_classes") {
    num_classes = parse_number<std::size_t>(key, value);
  } else if (key == "max_mention_length") {
    max_mention_length = parse_number<std::size_t>(key, value);
  } else if (key == "clip_norm") {
    clip_norm = parse_number<double>(key, value);
  } else if (key == "sigma") {
    sigma = parse_number<double>(key, value);
  } else if (key == "entity_blind") {
    entity_blind = parse_bool(key, value);
  } else if (key == "proposal_heads") {
    proposal_heads = parse_bool(key, value);
  } else if (key == "proposal_epochs") {
    proposal_epochs = parse_number<std::size_t>(key, value);
  } else if (key == "off_grid") {
    off_grid = parse_bool(key, value);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void TrainConfig::validate() const {
  if (effective_learning_rate() < 0.0 || !std::isfinite(effective_learning_rate())) {
    throw ConfigError("config: learning_rate must be finite and >= 0");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must lie in [0, 1)");
  if (clip_norm <= 0.0) throw ConfigError("config: clip_norm must be positive");
  if (max_mention_length < 1) throw ConfigError("config: max_mention_length must be >= 1");
  if (entity_dim != 0 && entity_dim != hidden_dim) {
    throw ConfigError("config: entity_dim must equal hidden_dim (or be 0)");
  }
  if (off_grid) return;
  if (dropout != 0.2 && dropout != 0.5) {
    throw ConfigError("config: dropout " + fmt(dropout) + " is off the {0.2, 0.5} grid (set off_grid = true)");
  }
  if (!on_dim_grid(word_dim) || !on_dim_grid(hidden_dim)) {
    throw ConfigError("config: dimensions must come from {32, 48, 64, 128, 256} (set off_grid = true)");
  }
}

std::string TrainConfig::to_string() const {
  std::ostringstream os;
  os << "optimizer = " << optimizer << '\n';
  if (learning_rate) os << "learning_rate = " << fmt(*learning_rate) << '\n';
  os << "dropout = " << fmt(dropout) << '\n'
     << "word_dim = " << word_dim << '\n'
     << "hidden_dim = " << hidden_dim << '\n'
     << "entity_dim = " << entity_dim << '\n'
     << "epochs = " << epochs << '\n'
     << "seed = " << seed << '\n'
     << "patience = " << patience << '\n'
     << "min_count = " << min_count << '\n'
     << "num_classes = " << num_classes << '\n'
     << "max_mention_length = " << max_mention_length << '\n'
     << "clip_norm = " << fmt(clip_norm) << '\n'
     << "sigma = " << fmt(sigma) << '\n'
     << "entity_blind = " << (entity_blind ? "true" : "false") << '\n'
     << "proposal_heads = " << (proposal_heads ? "true" : "false") << '\n'
     << "proposal_epochs = " << proposal_epochs << '\n'
     << "off_grid = " << (off_grid ? "true" : "false") << '\n';
  return os.str();
}

model::ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
  model::ModelConfig m;
  m.vocab_size = vocab_size;
  m.word_dim = word_dim;
  m.hidden_dim = hidden_dim;
  m.entity_dim = entity_dim;
  m.num_classes = num_classes != 0
                      ? num_classes
                      : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(vocab_size))));
  m.max_mention_length = max_mention_length;
  m.sigma = sigma;
  m.entity_blind = entity_blind;
  m.proposal_heads = proposal_heads;
  return m;
}

void AdaGrad::step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads) {
  if (sum_sq_.empty()) {
    for (Tensor* p : params) sum_sq_.emplace_back(p->size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) continue;
    auto data = params[i]->data();
    std::vector<double>& acc = sum_sq_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = grads[i][k];
      acc[k] += g * g;
      data[k] -= lr_ * g / std::sqrt(acc[k] + eps_);
    }
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads) {
  if (m_.empty()) {
    for (Tensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i]->data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = grads[i].empty() ? 0.0 : grads[i][k];
      m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * g;
      v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * g * g;
      data[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config) {
  if (config.optimizer == "adam") return std::make_unique<Adam>(config.effective_learning_rate());
  if (config.optimizer == "adagrad") return std::make_unique<AdaGrad>(config.effective_learning_rate());
  throw ConfigError("config: unknown optimizer '" + config.optimizer + "'");
}

namespace {

void clip(std::vector<std::vector<double>>& grads, double max_norm, const std::string& doc_id) {
  double norm_sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) norm_sq += v * v;
  }
  if (!std::isfinite(norm_sq)) throw NumericalError("training: document '" + doc_id + "': non-finite gradient");
  const double norm = std::sqrt(norm_sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g) v *= s;
    }
  }
}

bool is_proposal_head(const std::string& name) { return name.rfind("q.", 0) == 0; }

}  // namespace

DocGradient document_gradient(const model::ModelParams& params, const corpus::EncodedDocument& doc,
                              const TrainConfig& config, std::uint64_t noise_seed, std::uint64_t dropout_seed) {
  const auto names = params.tensors();
  DocGradient out;
  out.grads.resize(names.size());
  try {
    Tape tape;
    model::Runner run(tape, params, {model::NoiseMode::kSampled, noise_seed, config.dropout, dropout_seed});
    const model::DocScore score = model::score_document(run, doc.tokens, doc.annotations);
    out.log_prob = tape.scalar_value(score.total);
    if (!std::isfinite(out.log_prob)) throw NumericalError("non-finite log-probability");
    tape.backward(tape.affine(score.total, -1.0, 0.0));
    const auto& all = run.bound().all;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (is_proposal_head(names[i].first)) continue;
      if (params.config.entity_blind && (names[i].first == "w_r" || names[i].first == "w_e")) continue;
      const auto g = tape.grad(all[i]);
      out.grads[i].assign(g.begin(), g.end());
    }
  } catch (const NumericalError& e) {
    throw NumericalError("training: document '" + doc.id + "': " + e.what());
  }
  clip(out.grads, config.clip_norm, doc.id);
  if (!params.config.proposal_heads) return out;
  auto q_grads = proposal_gradient(params, doc, config, noise_seed);
  for (std::size_t i = 0; i < q_grads.size(); ++i) {
    if (!q_grads[i].empty()) out.grads[i] = std::move(q_grads[i]);
  }
  return out;
}

std::vector<std::vector<double>> proposal_gradient(const model::ModelParams& params,
                                                   const corpus::EncodedDocument& doc, const TrainConfig& config,
                                                   std::uint64_t noise_seed) {
  const auto names = params.tensors();
  std::vector<std::vector<double>> grads(names.size());
  try {
    Tape tape;
    model::Runner run(tape, params, {model::NoiseMode::kSampled, noise_seed, 0.0, 0});
    run.precompute_hidden(doc.tokens);
    const Var lq = model::proposal_score(run, doc.tokens, doc.annotations);
    if (!std::isfinite(tape.scalar_value(lq))) throw NumericalError("non-finite proposal log-probability");
    tape.backward(tape.affine(lq, -1.0, 0.0));
    const auto& all = run.bound().all;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!is_proposal_head(names[i].first)) continue;
      const auto g = tape.grad(all[i]);
      grads[i].assign(g.begin(), g.end());
    }
  } catch (const NumericalError& e) {
    throw NumericalError("training: document '" + doc.id + "': " + e.what());
  }
  clip(grads, config.clip_norm, doc.id);
  return grads;
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

EpochStats train_epoch(model::ModelParams& params, Optimizer& optimizer,
                       const std::vector<corpus::EncodedDocument>& docs, const TrainConfig& config, Rng& rng) {
  const std::vector<std::size_t> order = shuffled(docs.size(), rng);
  std::vector<Tensor*> tensors;
  for (const model::NamedTensor& nt : params.tensors()) tensors.push_back(nt.tensor);

  EpochStats stats;
  double total = 0.0;
  for (std::size_t idx : order) {
    const corpus::EncodedDocument& doc = docs[idx];
    const std::uint64_t noise_seed = rng();
    const std::uint64_t dropout_seed = rng();
    const DocGradient g = document_gradient(params, doc, config, noise_seed, dropout_seed);
    std::vector<std::span<const double>> spans(g.grads.begin(), g.grads.end());
    optimizer.step(tensors, spans);
    total += g.log_prob;
    stats.tokens += doc.tokens.size();
    ++stats.documents;
  }
  stats.mean_objective = stats.tokens == 0 ? 0.0 : total / static_cast<double>(stats.tokens);
  return stats;
}

double joint_perplexity(const model::ModelParams& params, const std::vector<corpus::EncodedDocument>& docs,
                        std::uint64_t seed) {
  if (docs.empty()) throw ConfigError("joint_perplexity: empty document set");
  double sum_log2 = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const model::RunOptions opts{model::NoiseMode::kSampled, derive_seed(seed, i), 0.0, 0};
    const double lp = model::doc_log_prob(params, docs[i].tokens, docs[i].annotations, opts).total;
    sum_log2 += lp / std::log(2.0);
    tokens += docs[i].tokens.size();
  }
  if (tokens == 0) throw ConfigError("joint_perplexity: documents contain no tokens");
  return std::exp2(-sum_log2 / static_cast<double>(tokens));
}

std::size_t select_model(const std::vector<corpus::EncodedDocument>& dev,
                         std::span<const model::ModelParams* const> candidates, std::uint64_t seed) {
  if (dev.empty()) throw ConfigError("select_model: empty development set");
  if (candidates.empty()) throw ConfigError("select_model: no candidates");
  std::size_t best = 0;
  double best_ppl = joint_perplexity(*candidates[0], dev, seed);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double ppl = joint_perplexity(*candidates[i], dev, seed);
    if (ppl < best_ppl) {
      best = i;
      best_ppl = ppl;
    }
  }
  return best;
}

TrainResult train(const TrainConfig& config, const corpus::Vocabulary& vocab,
                  const std::vector<corpus::EncodedDocument>& train_docs,
                  const std::vector<corpus::EncodedDocument>& dev_docs, const EpochCallback& on_epoch) {
  config.validate();
  if (train_docs.empty()) throw ConfigError("train: empty training set");
  const model::ModelConfig mc = config.model_config(vocab.size());
  nn::ClassMap classes(nn::assign_classes(vocab.counts(), mc.num_classes));
  TrainResult result;
  result.params = model::ModelParams::initialize(mc, std::move(classes), derive_seed(config.seed, 1));
  auto optimizer = make_optimizer(config);
  Rng rng(derive_seed(config.seed, 2));
  const std::uint64_t eval_seed = derive_seed(config.seed, 3);

  model::ModelParams current = result.params;
  double best_ppl = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochStats stats = train_epoch(current, *optimizer, train_docs, config, rng);
    EpochLog log;
    log.epoch = epoch;
    log.mean_objective = stats.mean_objective;
    log.dev_perplexity = dev_docs.empty() ? 0.0 : joint_perplexity(current, dev_docs, eval_seed);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (dev_docs.empty() || log.dev_perplexity < best_ppl) {
      best_ppl = log.dev_perplexity;
      result.params = current;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (mc.proposal_heads && config.proposal_epochs > 0) {
    std::vector<Tensor*> tensors;
    for (const model::NamedTensor& nt : result.params.tensors()) tensors.push_back(nt.tensor);
    auto q_optimizer = make_optimizer(config);
    for (std::size_t epoch = 0; epoch < config.proposal_epochs; ++epoch) {
      for (std::size_t idx : shuffled(train_docs.size(), rng)) {
        const auto g = proposal_gradient(result.params, train_docs[idx], config, rng());
        std::vector<std::span<const double>> spans(g.begin(), g.end());
        q_optimizer->step(tensors, spans);
      }
    }
  }
  return result;
}

std::string format_epoch(const EpochLog& log) {
  std::ostringstream os;
  os << "epoch " << log.epoch << " objective " << std::fixed << std::setprecision(5) << log.mean_objective
     << " dev_ppl " << std::setprecision(4) << log.dev_perplexity << " time " << std::setprecision(2)
     << log.seconds << "s";
  return os.str();
}

}  // namespace enlm::train
