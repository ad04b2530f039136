#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqattack/env.hpp"
#include "seqattack/lexicon.hpp"
#include "seqattack/text.hpp"

namespace seqattack {

/// WordSequence -> per-token hidden vectors h_i (m x d).
class StateEncoder {
 public:
  virtual ~StateEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual Eigen::MatrixXd encode(const WordSequence& words, const TokenAlignment& alignment) const = 0;
  virtual std::string id() const = 0;
};

/// h_i = tanh(S x_i + C (x_{i-1} + x_{i+1}) / 2 + c), zero-padded at the ends.
struct ContextLayer {
  Eigen::MatrixXd self;     // d x d_in
  Eigen::MatrixXd context;  // d x d_in
  Eigen::VectorXd bias;     // d

  std::size_t parameter_count() const { return self.size() + context.size() + bias.size(); }
};

/// Mean of each token's left and right neighbours (rows of x).
Eigen::MatrixXd neighbour_mean(const Eigen::MatrixXd& x);
Eigen::MatrixXd context_forward(const ContextLayer& layer, const Eigen::MatrixXd& x);

/// Frozen token inputs plus a small bidirectional context layer. A token's
/// input is the embedding of the word it belongs to when the lexicon knows
/// that word, otherwise a fixed pseudo-random vector derived from the piece.
class ContextualEncoder final : public StateEncoder {
 public:
  ContextualEncoder(const EmbeddingIndex& embeddings, std::uint64_t seed);

  std::size_t dim() const override { return static_cast<std::size_t>(layer_.bias.size()); }
  std::size_t input_dim() const { return embeddings_->dim(); }
  std::uint64_t seed() const { return seed_; }
  std::string id() const override { return "contextual-v1"; }

  Eigen::MatrixXd inputs(const WordSequence& words, const TokenAlignment& alignment) const;
  Eigen::MatrixXd encode(const WordSequence& words, const TokenAlignment& alignment) const override {
    return context_forward(layer_, inputs(words, alignment));
  }

  ContextLayer& layer() { return layer_; }
  const ContextLayer& layer() const { return layer_; }

 private:
  Eigen::VectorXd piece_vector(const std::string& piece) const;

  const EmbeddingIndex* embeddings_;
  std::uint64_t seed_;
  double scale_ = 1.0;
  ContextLayer layer_;
};

/// What the trainer needs to replay one word-finder decision.
struct DecisionRecord {
  Eigen::MatrixXd inputs;    // encoder inputs x_i, m x d_in
  Eigen::MatrixXd features;  // e_i = [h_i; b_i] at decision time, m x F
  std::vector<std::uint8_t> mask;  // 1 = token selectable (its word is not in W)
  std::size_t chosen = 0;
  double log_prob = 0.0;
};

/// A policy whose decisions are differentiable in a flat parameter vector.
class DifferentiablePolicy {
 public:
  virtual ~DifferentiablePolicy() = default;
  virtual Eigen::VectorXd parameters() const = 0;
  virtual void set_parameters(const Eigen::VectorXd& theta) = 0;
  /// log pi(chosen | state) under the current parameters.
  virtual double log_prob(const DecisionRecord& d) const = 0;
  virtual Eigen::VectorXd grad_log_prob(const DecisionRecord& d) const = 0;
};

struct TokenDistribution {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;      // exactly 0 on masked tokens
  Eigen::VectorXd log_probs;  // -inf on masked tokens
  std::vector<std::uint8_t> mask;
};

/// Masked softmax. Throws NoLegalAction when every token is masked.
TokenDistribution masked_softmax(const Eigen::VectorXd& logits, std::vector<std::uint8_t> mask);

/// Softmax head over logged feature rows: logits = features * w + b.
class LinearHeadPolicy final : public DifferentiablePolicy {
 public:
  LinearHeadPolicy(Eigen::VectorXd weights, double bias) : w_(std::move(weights)), b_(bias) {}

  Eigen::VectorXd parameters() const override;
  void set_parameters(const Eigen::VectorXd& theta) override;
  double log_prob(const DecisionRecord& d) const override;
  Eigen::VectorXd grad_log_prob(const DecisionRecord& d) const override;

  const Eigen::VectorXd& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  Eigen::VectorXd w_;
  double b_;
};

struct PolicyParams {
  Eigen::VectorXd head_weights;  // 2d
  double head_bias = 0.0;
};

enum class SelectMode { kSample, kArgmax };

struct WordChoice {
  std::size_t token = 0;
  std::size_t word = 0;
  double log_prob = 0.0;
};

/// Uniform in [0, 1) from the top 53 bits; stable across standard libraries.
double uniform01(std::mt19937_64& rng);

/// Argmax picks the highest logit among unmasked tokens (lowest index on
/// ties); sampling draws from the probabilities.
WordChoice select_word(const TokenDistribution& dist, SelectMode mode, const TokenAlignment& alignment,
                       std::mt19937_64& rng);

/// The trainable word finder: e_i = [h_i; b_i], b_i all-ones when token i's
/// word is still editable and all-zeros when it is in W, then a masked
/// linear softmax over tokens.
class WordFinderPolicy final : public DifferentiablePolicy {
 public:
  WordFinderPolicy(ContextualEncoder encoder, WordPieceTokenizer tokenizer, PolicyParams params,
                   bool fine_tune_encoder = false);

  /// Zero head weights (a uniform finder) and a fresh encoder.
  static WordFinderPolicy initial(const EmbeddingIndex& embeddings, WordPieceTokenizer tokenizer,
                                  std::uint64_t seed, bool fine_tune_encoder = false);

  const ContextualEncoder& encoder() const { return encoder_; }
  ContextualEncoder& encoder() { return encoder_; }
  const WordPieceTokenizer& tokenizer() const { return tokenizer_; }
  const PolicyParams& params() const { return params_; }
  PolicyParams& params() { return params_; }
  bool fine_tune_encoder() const { return fine_tune_; }

  TokenAlignment align(const WordSequence& words) const { return align_tokens(words, tokenizer_); }

  /// Per-token selectability: 1 when the owning word is outside W.
  std::vector<std::uint8_t> token_mask(const AttackState& state, const TokenAlignment& alignment) const;
  Eigen::MatrixXd features(const Eigen::MatrixXd& inputs, const std::vector<std::uint8_t>& mask) const;

  TokenDistribution token_distribution(const AttackState& state, const TokenAlignment& alignment,
                                       DecisionRecord* record = nullptr) const;

  Eigen::VectorXd parameters() const override;
  void set_parameters(const Eigen::VectorXd& theta) override;
  double log_prob(const DecisionRecord& d) const override;
  Eigen::VectorXd grad_log_prob(const DecisionRecord& d) const override;

  nlohmann::json to_json(const nlohmann::json& config_echo = nlohmann::json::object()) const;
  /// Throws ConfigError when the checkpoint's dimensions do not match the
  /// embeddings it is loaded against.
  static WordFinderPolicy from_json(const nlohmann::json& j, const EmbeddingIndex& embeddings);
  void save(const std::filesystem::path& path, const nlohmann::json& config_echo = nlohmann::json::object()) const;
  static WordFinderPolicy load(const std::filesystem::path& path, const EmbeddingIndex& embeddings);

 private:
  ContextualEncoder encoder_;
  WordPieceTokenizer tokenizer_;
  PolicyParams params_;
  bool fine_tune_;
};

struct CandidateScore {
  std::string word;
  double cosine = 0.0;
  RewardBreakdown reward;
};

struct Proposal {
  std::string word;
  RewardBreakdown reward;
  std::vector<CandidateScore> evaluated;
};

/// Reward-greedy substitution: builds x^t_s for every filtered candidate s,
/// queries the victim (charged to `state`) and keeps the best by r_t (or
/// r_att under the attack-only objective); ties go to the higher cosine,
/// then the lexicographically smaller word. Throws EmptyCandidates.
Proposal propose_substitution(const AttackEnv& env, AttackState& state, std::size_t word);

/// A uniformly random filtered candidate, without querying the victim.
std::string random_substitution(const AttackEnv& env, const AttackState& state, std::size_t word,
                                std::mt19937_64& rng);

}  // namespace seqattack
