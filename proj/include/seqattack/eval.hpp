#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqattack/env.hpp"
#include "seqattack/policy.hpp"
#include "seqattack/trainer.hpp"
#include "seqattack/victim.hpp"

namespace seqattack {

struct ConstraintLimits {
  double max_modification_rate = 0.4;
  double min_cosine = 0.5;
};

struct ConstraintCheck {
  bool pass = true;
  std::vector<std::string> reasons;  // subset of the names below, in this order
  double modification_rate = 0.0;
};

/// Reason names reported by enforce_constraints.
inline constexpr const char* kMaxModification = "max-modification";
inline constexpr const char* kPosMismatch = "pos-mismatch";
inline constexpr const char* kStopWordAltered = "stop-word-altered";
inline constexpr const char* kEmbeddingDistance = "embedding-distance";
inline constexpr const char* kTraceMismatch = "trace-mismatch";

/// Fraction of positions whose word differs from the original.
double modification_rate(const WordSequence& original, const WordSequence& adversary);

/// Re-checks an adversary from scratch by replaying its trace from the
/// original: modification rate below the cap, every substitution keeps the
/// POS tag in context and has cosine >= min_cosine (out-of-vocabulary words
/// fail), and no protected word changes. The trace must reproduce the
/// adversary exactly.
ConstraintCheck enforce_constraints(const WordSequence& original, const WordSequence& adversary,
                                    const std::vector<Substitution>& trace, const EmbeddingIndex& embeddings,
                                    const ProtectedWordPolicy& protection, const PosTagger& tagger,
                                    const ConstraintLimits& limits = {});

struct AttackResult {
  std::string sample_id;
  bool skipped = false;  // victim already wrong; not attacked
  bool flipped = false;  // prediction left the gold label
  bool success = false;  // flipped and passed enforce_constraints
  std::size_t gold = 0;
  std::size_t final_label = 0;
  WordSequence original;
  WordSequence adversary;
  double modification_rate = 0.0;
  double similarity = 0.0;
  std::size_t steps = 0;
  std::size_t query_count = 0;
  std::vector<Substitution> trace;
  std::vector<std::string> violations;
  std::string terminal_reason;
  bool truncated = false;
};

nlohmann::json to_json(const AttackResult& r);
AttackResult attack_result_from_json(const nlohmann::json& j);

struct AttackReport {
  std::string method;
  std::string tag;
  std::string similarity_scorer;
  std::size_t n_total = 0;
  std::size_t n_skipped = 0;
  std::size_t n_eligible = 0;
  std::size_t n_success = 0;
  std::size_t n_rejected = 0;  // flipped but failed the constraint re-check
  double a_rate = 0.0;         // n_success / n_eligible (0 when nothing is eligible)
  double mean_mod = 0.0;       // successes only
  double mean_sim = 0.0;       // successes only
  double mean_queries = 0.0;   // eligible samples
  double mean_queries_success = 0.0;
  double mean_steps = 0.0;  // eligible samples
  nlohmann::json config = nlohmann::json::object();
  std::vector<AttackResult> results;
};

/// Recomputes every aggregate of `report` from its per-sample results.
void aggregate(AttackReport& report);

nlohmann::json report_json(const AttackReport& report);  // aggregates + config, no per-sample records
void write_report(const AttackReport& report, const std::filesystem::path& dir);
AttackReport read_report(const std::filesystem::path& dir);

/// Plain-text table: method, tag, A-rate (%), Mod (%), Sim, mean queries.
std::string summary_table(const std::vector<AttackReport>& reports);

enum class AttackMethod {
  kAgent,           // learned finder, argmax
  kGreedyBaseline,  // deletion-importance order, reward-greedy substitution
  kRandomFinder,    // uniform word, reward-greedy substitution
  kRandomControl,   // uniform word, random candidate
};

std::string_view to_string(AttackMethod m);

struct EvalOptions {
  std::size_t jobs = 1;
  /// Attack only the first `limit` eligible samples.
  std::optional<std::size_t> limit;
  std::uint64_t seed = 1;
  std::string tag;
  nlohmann::json config_echo = nlohmann::json::object();
  ConstraintLimits limits;
};

/// Attacks every eligible sample and re-checks each adversary. `policy` is
/// required for kAgent and ignored otherwise.
AttackReport run_attack(const AttackEnv& env, const std::vector<Sample>& corpus, AttackMethod method,
                        const WordFinderPolicy* policy, const EvalOptions& options);

AttackReport attack_corpus(const WordFinderPolicy& policy, const AttackEnv& env, const std::vector<Sample>& corpus,
                           const EvalOptions& options = {});
AttackReport greedy_baseline_attack(const AttackEnv& env, const std::vector<Sample>& corpus,
                                    const EvalOptions& options = {});

struct TransferReport {
  AttackReport agent;
  AttackReport random;
};

/// A policy trained on one dataset attacking another dataset's victim
/// (carried by `env`), next to the uniform-word/random-candidate control.
TransferReport evaluate_transfer(const WordFinderPolicy& policy, const AttackEnv& env,
                                 const std::vector<Sample>& corpus, const std::string& source_tag,
                                 const std::string& target_tag, EvalOptions options = {});

/// Successful adversaries from `report` as new training samples with the
/// gold label of the sample they came from.
std::vector<Sample> adversarial_samples(const AttackReport& report, const std::vector<Sample>& corpus);

struct AdversarialTrainingResult {
  LinearVictim victim;
  AttackReport before;
  AttackReport after;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  std::size_t adversaries = 0;
};

/// Refits the reference victim on train + adversaries with the original
/// config, then attacks both victims with the same `attack` routine.
AdversarialTrainingResult adversarial_training(const LinearVictim& original, const std::vector<Sample>& train,
                                               const std::vector<Sample>& adversaries,
                                               const std::vector<Sample>& validation,
                                               const std::function<AttackReport(const VictimModel&)>& attack);

}  // namespace seqattack
