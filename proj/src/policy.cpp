#include "seqattack/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "seqattack/errors.hpp"

namespace seqattack {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw ConfigError(what + ": wrong row count");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = j[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError(what + ": wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  if (!m.allFinite()) throw ConfigError(what + ": non-finite entry");
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, Eigen::Index n, const std::string& what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != n) {
    throw ConfigError(what + ": expected " + std::to_string(n) + " entries, found " + std::to_string(v.size()));
  }
  Eigen::VectorXd out = Eigen::Map<const Eigen::VectorXd>(v.data(), n);
  if (!out.allFinite()) throw ConfigError(what + ": non-finite entry");
  return out;
}

// d log softmax(logits)[chosen] / d logits over the unmasked tokens.
Eigen::VectorXd logit_gradient(const TokenDistribution& dist, std::size_t chosen) {
  Eigen::VectorXd g = -dist.probs;
  g[static_cast<Eigen::Index>(chosen)] += 1.0;
  return g;
}

void check_record(const DecisionRecord& d) {
  if (d.chosen >= d.mask.size() || !d.mask[d.chosen]) throw std::invalid_argument("decision chose a masked token");
}

}  // namespace

Eigen::MatrixXd neighbour_mean(const Eigen::MatrixXd& x) {
  const Eigen::Index m = x.rows();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m, x.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    if (i > 0) c.row(i) += x.row(i - 1);
    if (i + 1 < m) c.row(i) += x.row(i + 1);
  }
  return 0.5 * c;
}

Eigen::MatrixXd context_forward(const ContextLayer& layer, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = x * layer.self.transpose() + neighbour_mean(x) * layer.context.transpose();
  z.rowwise() += layer.bias.transpose();
  return z.array().tanh().matrix();
}

ContextualEncoder::ContextualEncoder(const EmbeddingIndex& embeddings, std::uint64_t seed)
    : embeddings_(&embeddings), seed_(seed) {
  const auto d = static_cast<Eigen::Index>(embeddings.dim());
  if (d == 0) throw ConfigError("encoder needs embeddings with dim >= 1");
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) total += embeddings.norm(i);
  scale_ = embeddings.size() ? total / static_cast<double>(embeddings.size()) : 1.0;
  if (scale_ <= 0.0) scale_ = 1.0;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1 / std::sqrt(static_cast<double>(d)));
  layer_.self = Eigen::MatrixXd::Identity(d, d);
  layer_.context = Eigen::MatrixXd(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) layer_.context(r, c) = noise(rng);
  }
  layer_.bias = Eigen::VectorXd::Zero(d);
}

Eigen::VectorXd ContextualEncoder::piece_vector(const std::string& piece) const {
  std::uint64_t state = fnv1a(piece) ^ seed_;
  const auto d = static_cast<Eigen::Index>(input_dim());
  Eigen::VectorXd v(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    v[k] = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  const double n = v.norm();
  return n > 0 ? Eigen::VectorXd(v * (scale_ / n)) : v;
}

Eigen::MatrixXd ContextualEncoder::inputs(const WordSequence& words, const TokenAlignment& alignment) const {
  const auto m = static_cast<Eigen::Index>(alignment.token_count());
  Eigen::MatrixXd x(m, static_cast<Eigen::Index>(input_dim()));
  for (Eigen::Index t = 0; t < m; ++t) {
    const std::size_t w = alignment.word_of_token()[static_cast<std::size_t>(t)];
    if (auto v = embeddings_->lookup(to_lower(words[w]))) {
      x.row(t) = Eigen::Map<const Eigen::RowVectorXd>(v->data(), static_cast<Eigen::Index>(v->size()));
    } else {
      x.row(t) = piece_vector(alignment.tokens()[static_cast<std::size_t>(t)]).transpose();
    }
  }
  return x;
}

// ---------------------------------------------------------------------------

TokenDistribution masked_softmax(const Eigen::VectorXd& logits, std::vector<std::uint8_t> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != logits.size()) throw std::invalid_argument("mask size mismatch");
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) top = std::max(top, logits[i]);
  }
  if (top == -std::numeric_limits<double>::infinity()) throw NoLegalAction();
  TokenDistribution d;
  d.logits = logits;
  d.probs = Eigen::VectorXd::Zero(logits.size());
  d.log_probs = Eigen::VectorXd::Constant(logits.size(), -std::numeric_limits<double>::infinity());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) sum += std::exp(logits[i] - top);
  }
  const double log_sum = std::log(sum);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    d.log_probs[i] = logits[i] - top - log_sum;
    d.probs[i] = std::exp(logits[i] - top) / sum;
  }
  d.mask = std::move(mask);
  return d;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

WordChoice select_word(const TokenDistribution& dist, SelectMode mode, const TokenAlignment& alignment,
                       std::mt19937_64& rng) {
  const auto m = static_cast<std::size_t>(dist.probs.size());
  if (m != alignment.token_count()) throw std::invalid_argument("distribution does not match the alignment");
  std::size_t pick = m;
  if (mode == SelectMode::kArgmax) {
    for (std::size_t i = 0; i < m; ++i) {
      if (dist.mask[i] && (pick == m || dist.logits[i] > dist.logits[pick])) pick = i;
    }
  } else {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!dist.mask[i]) continue;
      pick = i;  // last legal token absorbs rounding slack
      acc += dist.probs[i];
      if (u < acc) break;
    }
  }
  if (pick == m) throw NoLegalAction();
  return {pick, recover_word(alignment, pick), dist.log_probs[static_cast<Eigen::Index>(pick)]};
}

// ---------------------------------------------------------------------------

Eigen::VectorXd LinearHeadPolicy::parameters() const {
  Eigen::VectorXd theta(w_.size() + 1);
  theta << w_, b_;
  return theta;
}

void LinearHeadPolicy::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != w_.size() + 1) throw std::invalid_argument("parameter size mismatch");
  w_ = theta.head(w_.size());
  b_ = theta[w_.size()];
}

double LinearHeadPolicy::log_prob(const DecisionRecord& d) const {
  check_record(d);
  Eigen::VectorXd logits = d.features * w_;
  logits.array() += b_;
  return masked_softmax(logits, d.mask).log_probs[static_cast<Eigen::Index>(d.chosen)];
}

Eigen::VectorXd LinearHeadPolicy::grad_log_prob(const DecisionRecord& d) const {
  check_record(d);
  Eigen::VectorXd logits = d.features * w_;
  logits.array() += b_;
  const auto g = logit_gradient(masked_softmax(logits, d.mask), d.chosen);
  Eigen::VectorXd out(w_.size() + 1);
  out << d.features.transpose() * g, g.sum();
  return out;
}

// ---------------------------------------------------------------------------

WordFinderPolicy::WordFinderPolicy(ContextualEncoder encoder, WordPieceTokenizer tokenizer, PolicyParams params,
                                   bool fine_tune_encoder)
    : encoder_(std::move(encoder)), tokenizer_(std::move(tokenizer)), params_(std::move(params)),
      fine_tune_(fine_tune_encoder) {
  if (params_.head_weights.size() != static_cast<Eigen::Index>(2 * encoder_.dim())) {
    throw ConfigError("head has " + std::to_string(params_.head_weights.size()) + " weights, encoder needs " +
                      std::to_string(2 * encoder_.dim()));
  }
  if (!params_.head_weights.allFinite() || !std::isfinite(params_.head_bias)) {
    throw ConfigError("head parameters must be finite");
  }
}

WordFinderPolicy WordFinderPolicy::initial(const EmbeddingIndex& embeddings, WordPieceTokenizer tokenizer,
                                           std::uint64_t seed, bool fine_tune_encoder) {
  ContextualEncoder encoder(embeddings, seed);
  PolicyParams params{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * encoder.dim())), 0.0};
  return WordFinderPolicy(std::move(encoder), std::move(tokenizer), std::move(params), fine_tune_encoder);
}

std::vector<std::uint8_t> WordFinderPolicy::token_mask(const AttackState& state,
                                                       const TokenAlignment& alignment) const {
  std::vector<std::uint8_t> mask(alignment.token_count());
  for (std::size_t t = 0; t < mask.size(); ++t) {
    mask[t] = !state.in_modified_set(alignment.word_of_token()[t]);
  }
  return mask;
}

Eigen::MatrixXd WordFinderPolicy::features(const Eigen::MatrixXd& inputs,
                                           const std::vector<std::uint8_t>& mask) const {
  const Eigen::MatrixXd h = context_forward(encoder_.layer(), inputs);
  const Eigen::Index d = h.cols();
  Eigen::MatrixXd e(h.rows(), 2 * d);
  e.leftCols(d) = h;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    e.row(i).rightCols(d).setConstant(mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
  }
  return e;
}

TokenDistribution WordFinderPolicy::token_distribution(const AttackState& state, const TokenAlignment& alignment,
                                                       DecisionRecord* record) const {
  if (alignment.word_count() != state.size()) throw std::invalid_argument("alignment is stale");
  auto mask = token_mask(state, alignment);
  Eigen::MatrixXd x = encoder_.inputs(state.current, alignment);
  Eigen::MatrixXd e = features(x, mask);
  Eigen::VectorXd logits = e * params_.head_weights;
  logits.array() += params_.head_bias;
  auto dist = masked_softmax(logits, mask);
  if (record) {
    record->inputs = std::move(x);
    record->features = std::move(e);
    record->mask = std::move(mask);
  }
  return dist;
}

Eigen::VectorXd WordFinderPolicy::parameters() const {
  const auto& l = encoder_.layer();
  const Eigen::Index head = params_.head_weights.size() + 1;
  Eigen::VectorXd theta(head + (fine_tune_ ? static_cast<Eigen::Index>(l.parameter_count()) : 0));
  theta.head(head - 1) = params_.head_weights;
  theta[head - 1] = params_.head_bias;
  if (fine_tune_) {
    Eigen::Index at = head;
    for (const Eigen::MatrixXd* m : {&l.self, &l.context}) {
      theta.segment(at, m->size()) = Eigen::Map<const Eigen::VectorXd>(m->data(), m->size());
      at += m->size();
    }
    theta.segment(at, l.bias.size()) = l.bias;
  }
  return theta;
}

void WordFinderPolicy::set_parameters(const Eigen::VectorXd& theta) {
  auto& l = encoder_.layer();
  const Eigen::Index head = params_.head_weights.size() + 1;
  const Eigen::Index expect = head + (fine_tune_ ? static_cast<Eigen::Index>(l.parameter_count()) : 0);
  if (theta.size() != expect) throw std::invalid_argument("parameter size mismatch");
  params_.head_weights = theta.head(head - 1);
  params_.head_bias = theta[head - 1];
  if (fine_tune_) {
    Eigen::Index at = head;
    for (Eigen::MatrixXd* m : {&l.self, &l.context}) {
      Eigen::Map<Eigen::VectorXd>(m->data(), m->size()) = theta.segment(at, m->size());
      at += m->size();
    }
    l.bias = theta.segment(at, l.bias.size());
  }
}

double WordFinderPolicy::log_prob(const DecisionRecord& d) const {
  check_record(d);
  const Eigen::MatrixXd e = fine_tune_ ? features(d.inputs, d.mask) : d.features;
  Eigen::VectorXd logits = e * params_.head_weights;
  logits.array() += params_.head_bias;
  return masked_softmax(logits, d.mask).log_probs[static_cast<Eigen::Index>(d.chosen)];
}

Eigen::VectorXd WordFinderPolicy::grad_log_prob(const DecisionRecord& d) const {
  check_record(d);
  const Eigen::MatrixXd e = fine_tune_ ? features(d.inputs, d.mask) : d.features;
  Eigen::VectorXd logits = e * params_.head_weights;
  logits.array() += params_.head_bias;
  const Eigen::VectorXd g = logit_gradient(masked_softmax(logits, d.mask), d.chosen);

  Eigen::VectorXd out = Eigen::VectorXd::Zero(parameters().size());
  const Eigen::Index head = params_.head_weights.size();
  out.head(head) = e.transpose() * g;
  out[head] = g.sum();
  if (!fine_tune_) return out;

  // Back through h = tanh(z) into the context layer.
  const auto& l = encoder_.layer();
  const Eigen::Index dim = l.bias.size();
  const Eigen::MatrixXd h = e.leftCols(dim);
  Eigen::MatrixXd dz = g * params_.head_weights.head(dim).transpose();
  dz.array() *= (1.0 - h.array().square());
  const Eigen::MatrixXd d_self = dz.transpose() * d.inputs;
  const Eigen::MatrixXd d_ctx = dz.transpose() * neighbour_mean(d.inputs);
  Eigen::Index at = head + 1;
  out.segment(at, d_self.size()) = Eigen::Map<const Eigen::VectorXd>(d_self.data(), d_self.size());
  at += d_self.size();
  out.segment(at, d_ctx.size()) = Eigen::Map<const Eigen::VectorXd>(d_ctx.data(), d_ctx.size());
  at += d_ctx.size();
  out.segment(at, dim) = dz.colwise().sum().transpose();
  return out;
}

nlohmann::json WordFinderPolicy::to_json(const nlohmann::json& config_echo) const {
  const auto& l = encoder_.layer();
  const auto& w = params_.head_weights;
  return {
      {"format", "seqattack-policy"},
      {"version", 1},
      {"encoder",
       {{"id", encoder_.id()},
        {"dim", encoder_.dim()},
        {"input_dim", encoder_.input_dim()},
        {"seed", encoder_.seed()},
        {"self", matrix_to_json(l.self)},
        {"context", matrix_to_json(l.context)},
        {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}}},
      {"tokenizer", {{"id", tokenizer_.id()}, {"vocab", tokenizer_.sorted_vocab()}}},
      {"head", {{"weights", std::vector<double>(w.data(), w.data() + w.size())}, {"bias", params_.head_bias}}},
      {"fine_tune_encoder", fine_tune_},
      {"config", config_echo},
  };
}

WordFinderPolicy WordFinderPolicy::from_json(const nlohmann::json& j, const EmbeddingIndex& embeddings) {
  try {
    if (j.value("format", "") != "seqattack-policy") throw ConfigError("not a seqattack policy checkpoint");
    if (j.value("version", 0) != 1) throw ConfigError("unsupported policy checkpoint version");
    const auto& enc = j.at("encoder");
    if (enc.value("id", "") != "contextual-v1") throw ConfigError("unknown encoder '" + enc.value("id", "") + "'");
    const auto d = enc.at("dim").get<std::size_t>();
    const auto d_in = enc.at("input_dim").get<std::size_t>();
    if (d_in != embeddings.dim() || d != embeddings.dim()) {
      throw ConfigError("checkpoint encoder expects " + std::to_string(d_in) + "-dim embeddings, got " +
                        std::to_string(embeddings.dim()));
    }
    ContextualEncoder encoder(embeddings, enc.at("seed").get<std::uint64_t>());
    const auto rows = static_cast<Eigen::Index>(d);
    const auto cols = static_cast<Eigen::Index>(d_in);
    encoder.layer().self = matrix_from_json(enc.at("self"), rows, cols, "encoder.self");
    encoder.layer().context = matrix_from_json(enc.at("context"), rows, cols, "encoder.context");
    encoder.layer().bias = vector_from_json(enc.at("bias"), rows, "encoder.bias");

    const auto& tok = j.at("tokenizer");
    if (tok.value("id", "") != "wordpiece-v1") throw ConfigError("unknown tokenizer '" + tok.value("id", "") + "'");
    const auto vocab = tok.at("vocab").get<std::vector<std::string>>();
    WordPieceTokenizer tokenizer(std::unordered_set<std::string>(vocab.begin(), vocab.end()));

    PolicyParams params;
    params.head_weights = vector_from_json(j.at("head").at("weights"), 2 * rows, "head.weights");
    params.head_bias = j.at("head").at("bias").get<double>();
    return WordFinderPolicy(std::move(encoder), std::move(tokenizer), std::move(params),
                            j.value("fine_tune_encoder", false));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed policy checkpoint: ") + e.what());
  }
}

void WordFinderPolicy::save(const std::filesystem::path& path, const nlohmann::json& config_echo) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write " + tmp);
    out << to_json(config_echo).dump(1) << '\n';
    if (!out) throw Error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

WordFinderPolicy WordFinderPolicy::load(const std::filesystem::path& path, const EmbeddingIndex& embeddings) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open policy checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("policy checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, embeddings);
}

// ---------------------------------------------------------------------------

Proposal propose_substitution(const AttackEnv& env, AttackState& state, std::size_t word) {
  const auto candidates = env.candidates(state, word);
  if (candidates.empty()) throw EmptyCandidates(word);
  const bool attack_only = env.config().objective == SubstitutionObjective::kAttackRewardOnly;
  auto key = [&](const CandidateScore& c) { return attack_only ? c.reward.r_att : c.reward.r_t; };

  Proposal p;
  p.evaluated.reserve(candidates.size());
  std::size_t best = 0;
  for (const auto& c : candidates) {
    auto probs = env.query(state, state.current.with_word(word, c.word));
    auto outcome = env.transition(state, word, c.word, std::move(probs));
    p.evaluated.push_back({c.word, c.score, outcome.reward});
    const auto& cand = p.evaluated.back();
    const auto& incumbent = p.evaluated[best];
    const std::size_t idx = p.evaluated.size() - 1;
    if (idx == 0) continue;
    if (key(cand) > key(incumbent) ||
        (key(cand) == key(incumbent) &&
         (cand.cosine > incumbent.cosine || (cand.cosine == incumbent.cosine && cand.word < incumbent.word)))) {
      best = idx;
    }
  }
  p.word = p.evaluated[best].word;
  p.reward = p.evaluated[best].reward;
  return p;
}

std::string random_substitution(const AttackEnv& env, const AttackState& state, std::size_t word,
                                std::mt19937_64& rng) {
  const auto candidates = env.candidates(state, word);
  if (candidates.empty()) throw EmptyCandidates(word);
  const auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(candidates.size()));
  return candidates[std::min(pick, candidates.size() - 1)].word;
}

}  // namespace seqattack
