#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqattack/env.hpp"
#include "seqattack/policy.hpp"

namespace seqattack {

struct TrajectoryStep {
  std::size_t word = 0;
  std::string from;
  std::string substitution;  // empty for skipped steps
  bool skipped = false;      // no admissible candidate; word moved into W
  bool exploratory = false;  // chosen by the epsilon-random warm-up
  RewardBreakdown reward;
  double gold_prob = 0.0;  // after the step
  std::size_t candidates_evaluated = 0;
  double finder_log_prob = 0.0;
  std::optional<DecisionRecord> decision;  // present for learned finders
};

/// One episode. `steps` may be empty when the initial state is already
/// terminal (nothing editable).
struct Trajectory {
  std::string sample_id;
  std::size_t gold = 0;
  std::vector<TrajectoryStep> steps;
  TerminalSignal terminal;
  double initial_gold_prob = 0.0;
  double final_gold_prob = 0.0;
  std::size_t final_label = 0;
  std::size_t query_count = 0;
  std::size_t edits = 0;
  bool truncated = false;
  WordSequence original;
  WordSequence adversary;
  std::vector<Substitution> trace;

  /// Steps that edited the text (skips excluded).
  std::size_t edit_steps() const;
  std::vector<double> rewards() const;
};

nlohmann::json trajectory_log(const Trajectory& t);

// ---------------------------------------------------------------------------
// Word-finder strategies used by rollouts.

struct FinderChoice {
  std::size_t word = 0;
  double log_prob = 0.0;
  std::optional<DecisionRecord> decision;
  bool exploratory = false;
};

class WordFinder {
 public:
  virtual ~WordFinder() = default;
  /// Called once after reset; may charge queries to `state`.
  virtual void begin(const AttackEnv& env, AttackState& state) { (void)env, (void)state; }
  /// Throws NoLegalAction when every word is in W.
  virtual FinderChoice choose(const AttackState& state, std::mt19937_64& rng) = 0;
  virtual void edited(std::size_t word, const std::string& replacement) { (void)word, (void)replacement; }
};

/// The learned finder. With probability `epsilon` the token is drawn
/// uniformly from the legal ones instead; the policy's log-prob of that
/// token is still what gets recorded.
class PolicyFinder final : public WordFinder {
 public:
  PolicyFinder(const WordFinderPolicy& policy, SelectMode mode, double epsilon = 0.0)
      : policy_(policy), mode_(mode), epsilon_(epsilon) {}
  PolicyFinder(WordFinderPolicy&&, SelectMode, double = 0.0) = delete;

  void begin(const AttackEnv& env, AttackState& state) override;
  FinderChoice choose(const AttackState& state, std::mt19937_64& rng) override;
  void edited(std::size_t word, const std::string& replacement) override;

 private:
  const WordFinderPolicy& policy_;
  SelectMode mode_;
  double epsilon_;
  TokenAlignment alignment_;
};

/// Uniform over words outside W.
class UniformFinder final : public WordFinder {
 public:
  FinderChoice choose(const AttackState& state, std::mt19937_64& rng) override;
};

/// Ranks words once on the original input by the gold-probability drop when
/// each is deleted (one query per editable word), then walks that order.
class ImportanceFinder final : public WordFinder {
 public:
  void begin(const AttackEnv& env, AttackState& state) override;
  FinderChoice choose(const AttackState& state, std::mt19937_64& rng) override;

  const std::vector<std::size_t>& ranking() const { return ranking_; }
  const std::vector<double>& importance() const { return importance_; }

 private:
  std::vector<std::size_t> ranking_;
  std::vector<double> importance_;  // by word index; 0 for words in W
};

/// Deletion importance of every word outside W, charged to `state`.
std::vector<double> deletion_importance(const AttackEnv& env, AttackState& state);

enum class SubstitutionMode { kRewardGreedy, kRandom };

/// Runs one episode to its terminal signal. Throws SkippedSample from reset.
Trajectory rollout(const AttackEnv& env, const Sample& sample, WordFinder& finder, SubstitutionMode mode,
                   std::mt19937_64& rng);

// ---------------------------------------------------------------------------

/// kForward: sum_{t=1..T} gamma^t r_t (first step already discounted once).
/// kBackwardRecursion: G <- gamma G + r_t from the last step back, i.e.
/// sum_t gamma^(t-1) r_t.
enum class ReturnConvention { kForward, kBackwardRecursion };

double discounted_return(const std::vector<double>& rewards, double gamma,
                         ReturnConvention convention = ReturnConvention::kForward);
double discounted_return(const Trajectory& t, double gamma,
                         ReturnConvention convention = ReturnConvention::kForward);

struct TrainConfig {
  double gamma = 0.9;
  std::size_t episodes = 200;
  double learning_rate = 0.02;
  std::string optimizer = "adam";  // or "sgd"
  std::uint64_t seed = 1;
  ReturnConvention return_convention = ReturnConvention::kForward;
  std::size_t batch_size = 1;
  /// Extension: subtract an exponential moving average of returns.
  bool baseline = false;
  double baseline_decay = 0.9;
  double warmup_fraction = 0.1;
  double warmup_epsilon = 1.0;
  bool fine_tune_encoder = false;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// First-order ascent on a flat parameter vector.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) = 0;
  virtual nlohmann::json state() const = 0;
  virtual void restore(const nlohmann::json& state) = 0;
  virtual std::string kind() const = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) override;
  nlohmann::json state() const override { return nlohmann::json::object(); }
  void restore(const nlohmann::json&) override {}
  std::string kind() const override { return "sgd"; }

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) override;
  nlohmann::json state() const override;
  void restore(const nlohmann::json& state) override;
  std::string kind() const override { return "adam"; }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config, std::size_t n_params);

/// (1/M) sum_m w_m sum_t log pi(a_t^f | s_t) over the decisions each
/// trajectory recorded; w_m is the (baselined) return.
double surrogate_objective(const DifferentiablePolicy& policy, const std::vector<const Trajectory*>& batch,
                           const std::vector<double>& weights);
Eigen::VectorXd surrogate_gradient(const DifferentiablePolicy& policy, const std::vector<const Trajectory*>& batch,
                                   const std::vector<double>& weights);

struct UpdateStats {
  double mean_return = 0.0;
  double mean_length = 0.0;
  double grad_norm = 0.0;
  bool applied = false;
};

/// One ascent step on the surrogate. An all-zero gradient (or a zero
/// learning rate) leaves the parameters untouched. Non-finite gradients
/// throw TrainingError naming the offending trajectory.
UpdateStats policy_gradient_update(DifferentiablePolicy& policy, Optimizer& optimizer,
                                   const std::vector<const Trajectory*>& batch, const TrainConfig& config,
                                   double baseline = 0.0);

struct TrainRecord {
  std::size_t episode = 0;
  std::string sample_id;
  double ret = 0.0;
  bool success = false;
  std::size_t steps = 0;
  std::size_t queries = 0;
  double epsilon = 0.0;
  double grad_norm = 0.0;
};

nlohmann::json to_json(const TrainRecord& r);

/// Everything needed to continue a run where it stopped.
struct TrainProgress {
  std::size_t episode = 0;  // episodes completed
  nlohmann::json optimizer;
  std::string rng;
  double baseline = 0.0;
  bool baseline_ready = false;
};

nlohmann::json to_json(const TrainProgress& p);
TrainProgress train_progress_from_json(const nlohmann::json& j);

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_episode;
  /// Called after every update with the progress so far.
  std::function<void(const WordFinderPolicy&, const TrainProgress&)> on_checkpoint;
  std::optional<TrainProgress> resume;
};

struct TrainResult {
  std::vector<TrainRecord> log;
  std::size_t updates = 0;
  std::size_t eligible = 0;
};

double warmup_epsilon(const TrainConfig& config, std::size_t episode);

/// REINFORCE over `config.episodes` episodes drawn uniformly from the
/// samples the victim classifies correctly. Throws NothingToTrain when
/// there are none.
TrainResult train(WordFinderPolicy& policy, const AttackEnv& env, const std::vector<Sample>& corpus,
                  const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace seqattack
