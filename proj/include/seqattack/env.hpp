#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqattack/lexicon.hpp"
#include "seqattack/scorers.hpp"
#include "seqattack/text.hpp"
#include "seqattack/victim.hpp"

namespace seqattack {

/// Weights of the attack reward and the two punishments.
struct Betas {
  double attack = 1.0;
  double fluency = 1.0;
  double similarity = 0.2;
};

/// What propose_substitution maximizes over candidates.
enum class SubstitutionObjective { kInstantReward, kAttackRewardOnly };

struct AttackConfig {
  std::size_t top_k = 50;
  double synonym_threshold = 0.5;
  Betas betas;
  /// Admitted adversaries change strictly fewer than this fraction of words.
  double max_modification_rate = 0.4;
  /// Defaults to ceil(0.4 * n) for an n-word input.
  std::optional<std::size_t> max_steps;
  SubstitutionObjective objective = SubstitutionObjective::kInstantReward;
  std::size_t max_words = 256;
};

nlohmann::json to_json(const AttackConfig& config);
AttackConfig attack_config_from_json(const nlohmann::json& j);

enum class TerminalKind { kSuccess, kFailure };

struct TerminalSignal {
  TerminalKind kind = TerminalKind::kFailure;
  std::string reason;

  double value() const { return kind == TerminalKind::kSuccess ? 1.0 : -1.0; }
  bool success() const { return kind == TerminalKind::kSuccess; }
};

std::string_view to_string(TerminalKind kind);

/// One step's reward terms. r_t is always combine(betas, r_att, r_flu, r_sim).
struct RewardBreakdown {
  double r_att = 0.0;
  double r_flu = 0.0;
  double r_sim = 0.0;
  double r_t = 0.0;
  Betas betas;

  static double combine(const Betas& b, double r_att, double r_flu, double r_sim) {
    return b.attack * r_att - b.fluency * r_flu - b.similarity * r_sim;
  }
  static RewardBreakdown make(const Betas& b, double r_att, double r_flu, double r_sim) {
    return {r_att, r_flu, r_sim, combine(b, r_att, r_flu, r_sim), b};
  }
};

struct Substitution {
  std::size_t position = 0;
  std::string from;
  std::string to;
};

/// The environment state: the text being edited plus the modified-word set
/// W (seeded with protected words). Value type; one owner per episode.
struct AttackState {
  Sample sample;
  WordSequence original;  // pristine attackable field (after truncation)
  WordSequence current;
  std::vector<std::uint8_t> modified;       // W membership per word
  std::vector<std::uint8_t> protected_word;
  std::vector<std::uint8_t> has_synonyms;  // unfiltered synonym set is non-empty
  std::size_t step = 0;
  std::size_t edits = 0;  // positions whose text differs from the original
  std::vector<double> probs;
  double gold_prob = 0.0;
  std::size_t query_count = 0;
  std::size_t max_steps = 0;
  std::size_t max_edits = 0;
  bool truncated = false;
  std::vector<Substitution> trace;

  std::size_t size() const { return current.size(); }
  bool in_modified_set(std::size_t i) const { return modified[i] != 0; }
  std::size_t modified_count() const;
  std::size_t predicted_label() const { return argmax(probs); }
  /// The sample's fields with the attackable one replaced by `field`.
  std::vector<std::string> fields_with(const WordSequence& field) const;
};

struct StepAction {
  std::size_t word = 0;
  std::string substitution;
  double finder_log_prob = 0.0;
};

struct StepOutcome {
  AttackState state;
  RewardBreakdown reward;
  std::optional<TerminalSignal> terminal;
};

/// Black-box environment around a victim. Every victim call made through
/// it is charged to the state's query_count.
class AttackEnv {
 public:
  struct Resources {
    const VictimModel& victim;
    const EmbeddingIndex& embeddings;
    const ProtectedWordPolicy& protection;
    const PosTagger& tagger;
    const FluencyScorer& fluency;
    const SimilarityScorer& similarity;
    Diagnostics* diagnostics = nullptr;
  };

  AttackEnv(Resources resources, AttackConfig config);

  const AttackConfig& config() const { return config_; }
  const Resources& resources() const { return res_; }

  /// Initial state: step 0, W = protected words, one victim query. Throws
  /// SkippedSample when the victim already gets the sample wrong.
  AttackState reset(const Sample& sample) const;

  /// Success when the prediction left the gold label; failure when no legal
  /// edit remains or a step/modification limit is hit.
  std::optional<TerminalSignal> terminal_check(const AttackState& state) const;

  /// Threshold- and POS-filtered synonyms for word `i` of the current text,
  /// cased like the word they replace.
  std::vector<SynonymCandidate> candidates(const AttackState& state, std::size_t i) const;

  /// One charged victim call on `state` with the attackable field set to
  /// `field`.
  std::vector<double> query(AttackState& state, const WordSequence& field) const;

  /// Pure transition given the victim's probabilities for the edited text.
  StepOutcome transition(const AttackState& state, std::size_t word, const std::string& replacement,
                         std::vector<double> probs) const;

  /// Applies the action: queries the victim once, grows W, scores the step.
  StepOutcome step(const AttackState& state, const StepAction& action) const;

  /// No admissible substitution for `word`: add it to W without editing or
  /// counting a step. The reward is zero unless this ends the episode, in
  /// which case r_att carries the terminal signal.
  StepOutcome skip(const AttackState& state, std::size_t word) const;

 private:
  Resources res_;
  AttackConfig config_;
};

/// r_d when the step terminated the episode, otherwise the drop in the
/// gold-label probability.
double attack_reward(const AttackState& prev, const AttackState& curr,
                     const std::optional<TerminalSignal>& terminal);

/// Largest k with k / n < rate.
std::size_t max_admissible_edits(std::size_t n, double rate);

}  // namespace seqattack
