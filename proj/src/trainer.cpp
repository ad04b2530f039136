#include "seqattack/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "seqattack/errors.hpp"

namespace seqattack {

std::size_t Trajectory::edit_steps() const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(), [](const TrajectoryStep& s) { return !s.skipped; }));
}

std::vector<double> Trajectory::rewards() const {
  std::vector<double> r;
  r.reserve(steps.size());
  for (const auto& s : steps) r.push_back(s.reward.r_t);
  return r;
}

nlohmann::json trajectory_log(const Trajectory& t) {
  auto steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    steps.push_back({
        {"word", s.word},
        {"from", s.from},
        {"substitution", s.skipped ? nlohmann::json(nullptr) : nlohmann::json(s.substitution)},
        {"skipped", s.skipped},
        {"r_att", s.reward.r_att},
        {"r_flu", s.reward.r_flu},
        {"r_sim", s.reward.r_sim},
        {"r_t", s.reward.r_t},
        {"gold_prob", s.gold_prob},
        {"finder_log_prob", s.finder_log_prob},
        {"candidates", s.candidates_evaluated},
    });
  }
  return {
      {"sample_id", t.sample_id},
      {"initial_gold_prob", t.initial_gold_prob},
      {"steps", steps},
      {"terminal", to_string(t.terminal.kind)},
      {"terminal_reason", t.terminal.reason},
      {"query_count", t.query_count},
  };
}

// ---------------------------------------------------------------------------

void PolicyFinder::begin(const AttackEnv&, AttackState& state) { alignment_ = policy_.align(state.current); }

FinderChoice PolicyFinder::choose(const AttackState& state, std::mt19937_64& rng) {
  DecisionRecord record;
  const auto dist = policy_.token_distribution(state, alignment_, &record);
  WordChoice pick;
  bool exploratory = false;
  if (epsilon_ > 0.0 && uniform01(rng) < epsilon_) {
    std::vector<std::size_t> legal;
    for (std::size_t t = 0; t < dist.mask.size(); ++t) {
      if (dist.mask[t]) legal.push_back(t);
    }
    const auto k = std::min(legal.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(legal.size())));
    pick.token = legal[k];
    pick.word = recover_word(alignment_, pick.token);
    pick.log_prob = dist.log_probs[static_cast<Eigen::Index>(pick.token)];
    exploratory = true;
  } else {
    pick = select_word(dist, mode_, alignment_, rng);
  }
  record.chosen = pick.token;
  record.log_prob = pick.log_prob;
  return {pick.word, pick.log_prob, std::move(record), exploratory};
}

void PolicyFinder::edited(std::size_t word, const std::string& replacement) {
  alignment_ = alignment_.with_word_replaced(word, replacement, policy_.tokenizer());
}

FinderChoice UniformFinder::choose(const AttackState& state, std::mt19937_64& rng) {
  std::vector<std::size_t> legal;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!state.in_modified_set(i)) legal.push_back(i);
  }
  if (legal.empty()) throw NoLegalAction();
  const auto k = std::min(legal.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(legal.size())));
  return {legal[k], -std::log(static_cast<double>(legal.size())), std::nullopt, false};
}

std::vector<double> deletion_importance(const AttackEnv& env, AttackState& state) {
  std::vector<double> importance(state.size(), 0.0);
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state.in_modified_set(i)) continue;
    const auto probs = env.query(state, state.current.without_word(i));
    importance[i] = state.gold_prob - probs.at(state.sample.gold);
  }
  return importance;
}

void ImportanceFinder::begin(const AttackEnv& env, AttackState& state) {
  importance_ = deletion_importance(env, state);
  ranking_.clear();
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!state.in_modified_set(i)) ranking_.push_back(i);
  }
  std::stable_sort(ranking_.begin(), ranking_.end(),
                   [&](std::size_t a, std::size_t b) { return importance_[a] > importance_[b]; });
}

FinderChoice ImportanceFinder::choose(const AttackState& state, std::mt19937_64&) {
  for (std::size_t i : ranking_) {
    if (!state.in_modified_set(i)) return {i, 0.0, std::nullopt, false};
  }
  throw NoLegalAction();
}

Trajectory rollout(const AttackEnv& env, const Sample& sample, WordFinder& finder, SubstitutionMode mode,
                   std::mt19937_64& rng) {
  AttackState state = env.reset(sample);
  Trajectory t;
  t.sample_id = sample.id;
  t.gold = sample.gold;
  t.truncated = state.truncated;
  t.original = state.original;
  t.initial_gold_prob = state.gold_prob;
  finder.begin(env, state);

  auto terminal = env.terminal_check(state);
  while (!terminal) {
    FinderChoice choice;
    try {
      choice = finder.choose(state, rng);
    } catch (const NoLegalAction&) {
      terminal = TerminalSignal{TerminalKind::kFailure, "no-legal-action"};
      break;
    }
    TrajectoryStep step;
    step.word = choice.word;
    step.from = state.current[choice.word];
    step.exploratory = choice.exploratory;
    step.finder_log_prob = choice.log_prob;
    step.decision = std::move(choice.decision);

    StepOutcome out;
    try {
      std::string replacement;
      if (mode == SubstitutionMode::kRewardGreedy) {
        auto proposal = propose_substitution(env, state, choice.word);
        step.candidates_evaluated = proposal.evaluated.size();
        replacement = std::move(proposal.word);
      } else {
        replacement = random_substitution(env, state, choice.word, rng);
      }
      out = env.step(state, {choice.word, replacement, choice.log_prob});
      finder.edited(choice.word, replacement);
      step.substitution = std::move(replacement);
    } catch (const EmptyCandidates&) {
      out = env.skip(state, choice.word);
      step.skipped = true;
    }
    step.reward = out.reward;
    step.gold_prob = out.state.gold_prob;
    t.steps.push_back(std::move(step));
    state = std::move(out.state);
    terminal = out.terminal;
  }

  t.terminal = *terminal;
  t.final_gold_prob = state.gold_prob;
  t.final_label = state.predicted_label();
  t.query_count = state.query_count;
  t.edits = state.edits;
  t.adversary = state.current;
  t.trace = state.trace;
  return t;
}

// ---------------------------------------------------------------------------

double discounted_return(const std::vector<double>& rewards, double gamma, ReturnConvention convention) {
  if (convention == ReturnConvention::kBackwardRecursion) {
    double g = 0.0;
    for (auto it = rewards.rbegin(); it != rewards.rend(); ++it) g = gamma * g + *it;
    return g;
  }
  double g = 0.0;
  double discount = gamma;
  for (double r : rewards) {
    g += discount * r;
    discount *= gamma;
  }
  return g;
}

double discounted_return(const Trajectory& t, double gamma, ReturnConvention convention) {
  return discounted_return(t.rewards(), gamma, convention);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"gamma", c.gamma},
      {"episodes", c.episodes},
      {"learning_rate", c.learning_rate},
      {"optimizer", c.optimizer},
      {"seed", c.seed},
      {"return_convention", c.return_convention == ReturnConvention::kForward ? "forward" : "backward-recursion"},
      {"batch_size", c.batch_size},
      {"baseline", c.baseline},
      {"baseline_decay", c.baseline_decay},
      {"warmup_fraction", c.warmup_fraction},
      {"warmup_epsilon", c.warmup_epsilon},
      {"fine_tune_encoder", c.fine_tune_encoder},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.gamma = j.value("gamma", c.gamma);
  c.episodes = j.value("episodes", c.episodes);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.seed = j.value("seed", c.seed);
  const auto conv = j.value("return_convention", std::string("forward"));
  if (conv == "forward") {
    c.return_convention = ReturnConvention::kForward;
  } else if (conv == "backward-recursion") {
    c.return_convention = ReturnConvention::kBackwardRecursion;
  } else {
    throw ConfigError("unknown return_convention '" + conv + "'");
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.baseline = j.value("baseline", c.baseline);
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.warmup_epsilon = j.value("warmup_epsilon", c.warmup_epsilon);
  c.fine_tune_encoder = j.value("fine_tune_encoder", c.fine_tune_encoder);

  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (c.episodes == 0) throw ConfigError("episodes must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (c.optimizer != "adam" && c.optimizer != "sgd") throw ConfigError("optimizer must be 'adam' or 'sgd'");
  if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction <= 1.0)) throw ConfigError("warmup_fraction outside [0, 1]");
  if (!(c.warmup_epsilon >= 0.0 && c.warmup_epsilon <= 1.0)) throw ConfigError("warmup_epsilon outside [0, 1]");
  if (!(c.baseline_decay >= 0.0 && c.baseline_decay < 1.0)) throw ConfigError("baseline_decay outside [0, 1)");
  return c;
}

// ---------------------------------------------------------------------------

void Sgd::ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) { theta += lr_ * grad; }

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size()) throw std::invalid_argument("Adam: gradient size changed");
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  theta.array() += lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

nlohmann::json Adam::state() const {
  return {{"t", t_},
          {"m", std::vector<double>(m_.data(), m_.data() + m_.size())},
          {"v", std::vector<double>(v_.data(), v_.data() + v_.size())}};
}

void Adam::restore(const nlohmann::json& s) {
  const auto m = s.at("m").get<std::vector<double>>();
  const auto v = s.at("v").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(m.size()) != m_.size() || v.size() != m.size()) {
    throw ConfigError("optimizer state does not match the policy's parameter count");
  }
  t_ = s.at("t").get<std::uint64_t>();
  m_ = Eigen::Map<const Eigen::VectorXd>(m.data(), m_.size());
  v_ = Eigen::Map<const Eigen::VectorXd>(v.data(), v_.size());
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config, std::size_t n_params) {
  if (config.optimizer == "sgd") return std::make_unique<Sgd>(config.learning_rate);
  if (config.optimizer == "adam") return std::make_unique<Adam>(n_params, config.learning_rate);
  throw ConfigError("unknown optimizer '" + config.optimizer + "'");
}

double surrogate_objective(const DifferentiablePolicy& policy, const std::vector<const Trajectory*>& batch,
                           const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    double log_pi = 0.0;
    for (const auto& s : batch[m]->steps) {
      if (s.decision) log_pi += policy.log_prob(*s.decision);
    }
    total += weights[m] * log_pi;
  }
  return total / static_cast<double>(batch.size());
}

Eigen::VectorXd surrogate_gradient(const DifferentiablePolicy& policy, const std::vector<const Trajectory*>& batch,
                                   const std::vector<double>& weights) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.parameters().size());
  for (std::size_t m = 0; m < batch.size(); ++m) {
    if (weights[m] == 0.0) continue;
    Eigen::VectorXd gm = Eigen::VectorXd::Zero(g.size());
    for (const auto& s : batch[m]->steps) {
      if (s.decision) gm += policy.grad_log_prob(*s.decision);
    }
    gm *= weights[m];
    if (!gm.allFinite()) throw TrainingError("non-finite gradient from trajectory " + batch[m]->sample_id);
    g += gm;
  }
  return g / static_cast<double>(batch.size());
}

UpdateStats policy_gradient_update(DifferentiablePolicy& policy, Optimizer& optimizer,
                                   const std::vector<const Trajectory*>& batch, const TrainConfig& config,
                                   double baseline) {
  if (batch.empty()) throw TrainingError("empty batch");
  UpdateStats stats;
  std::vector<double> weights;
  for (const auto* t : batch) {
    const double g = discounted_return(*t, config.gamma, config.return_convention);
    if (!std::isfinite(g)) throw TrainingError("non-finite return from trajectory " + t->sample_id);
    stats.mean_return += g;
    stats.mean_length += static_cast<double>(t->steps.size());
    weights.push_back(g - baseline);
  }
  stats.mean_return /= static_cast<double>(batch.size());
  stats.mean_length /= static_cast<double>(batch.size());

  const Eigen::VectorXd grad = surrogate_gradient(policy, batch, weights);
  stats.grad_norm = grad.norm();
  if (config.learning_rate == 0.0 || stats.grad_norm == 0.0) return stats;
  Eigen::VectorXd theta = policy.parameters();
  optimizer.ascend(theta, grad);
  if (!theta.allFinite()) throw TrainingError("update produced non-finite parameters");
  policy.set_parameters(theta);
  stats.applied = true;
  return stats;
}

nlohmann::json to_json(const TrainRecord& r) {
  return {{"episode", r.episode}, {"sample_id", r.sample_id}, {"return", r.ret},     {"success", r.success},
          {"steps", r.steps},     {"queries", r.queries},     {"epsilon", r.epsilon}, {"grad_norm", r.grad_norm}};
}

nlohmann::json to_json(const TrainProgress& p) {
  return {{"episode", p.episode},
          {"optimizer", p.optimizer},
          {"rng", p.rng},
          {"baseline", p.baseline},
          {"baseline_ready", p.baseline_ready}};
}

TrainProgress train_progress_from_json(const nlohmann::json& j) {
  TrainProgress p;
  p.episode = j.at("episode").get<std::size_t>();
  p.optimizer = j.at("optimizer");
  p.rng = j.at("rng").get<std::string>();
  p.baseline = j.value("baseline", 0.0);
  p.baseline_ready = j.value("baseline_ready", false);
  return p;
}

double warmup_epsilon(const TrainConfig& config, std::size_t episode) {
  const auto warm = static_cast<std::size_t>(std::ceil(config.warmup_fraction * static_cast<double>(config.episodes)));
  if (episode >= warm) return 0.0;
  return config.warmup_epsilon * (1.0 - static_cast<double>(episode) / static_cast<double>(warm));
}

TrainResult train(WordFinderPolicy& policy, const AttackEnv& env, const std::vector<Sample>& corpus,
                  const TrainConfig& config, const TrainHooks& hooks) {
  if (corpus.empty()) throw TrainingError("empty training corpus");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      env.reset(corpus[i]);
      eligible.push_back(i);
    } catch (const SkippedSample&) {
    }
  }
  if (eligible.empty()) throw NothingToTrain();

  TrainResult result;
  result.eligible = eligible.size();
  std::mt19937_64 rng(config.seed);
  auto optimizer = make_optimizer(config, static_cast<std::size_t>(policy.parameters().size()));
  TrainProgress progress;
  if (hooks.resume) {
    progress = *hooks.resume;
    optimizer->restore(progress.optimizer);
    std::istringstream(progress.rng) >> rng;
  }

  auto snapshot = [&]() {
    progress.optimizer = optimizer->state();
    std::ostringstream s;
    s << rng;
    progress.rng = s.str();
    if (hooks.on_checkpoint) hooks.on_checkpoint(policy, progress);
  };

  std::vector<Trajectory> pending;
  std::vector<TrainRecord> pending_records;
  for (std::size_t e = progress.episode; e < config.episodes; ++e) {
    const auto k = std::min(eligible.size() - 1,
                            static_cast<std::size_t>(uniform01(rng) * static_cast<double>(eligible.size())));
    const double eps = warmup_epsilon(config, e);
    PolicyFinder finder(policy, SelectMode::kSample, eps);
    Trajectory t = rollout(env, corpus[eligible[k]], finder, SubstitutionMode::kRewardGreedy, rng);

    TrainRecord rec;
    rec.episode = e;
    rec.sample_id = t.sample_id;
    rec.ret = discounted_return(t, config.gamma, config.return_convention);
    rec.success = t.terminal.success();
    rec.steps = t.edit_steps();
    rec.queries = t.query_count;
    rec.epsilon = eps;
    pending.push_back(std::move(t));
    pending_records.push_back(rec);

    if (pending.size() < config.batch_size && e + 1 < config.episodes) continue;

    std::vector<const Trajectory*> batch;
    for (const auto& p : pending) batch.push_back(&p);
    const double base = (config.baseline && progress.baseline_ready) ? progress.baseline : 0.0;
    const auto stats = policy_gradient_update(policy, *optimizer, batch, config, base);
    ++result.updates;
    if (config.baseline) {
      progress.baseline = progress.baseline_ready
                              ? config.baseline_decay * progress.baseline + (1.0 - config.baseline_decay) * stats.mean_return
                              : stats.mean_return;
      progress.baseline_ready = true;
    }
    for (auto& r : pending_records) {
      r.grad_norm = stats.grad_norm;
      if (hooks.on_episode) hooks.on_episode(r);
      result.log.push_back(r);
    }
    pending.clear();
    pending_records.clear();
    progress.episode = e + 1;
    snapshot();
  }
  return result;
}

}  // namespace seqattack
