#include "seqattack/env.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "seqattack/errors.hpp"

namespace seqattack {

nlohmann::json to_json(const AttackConfig& c) {
  nlohmann::json j = {
      {"top_k", c.top_k},
      {"synonym_threshold", c.synonym_threshold},
      {"betas", {c.betas.attack, c.betas.fluency, c.betas.similarity}},
      {"max_modification_rate", c.max_modification_rate},
      {"objective", c.objective == SubstitutionObjective::kInstantReward ? "instant" : "attack-only"},
      {"max_words", c.max_words},
  };
  j["max_steps"] = c.max_steps ? nlohmann::json(*c.max_steps) : nlohmann::json(nullptr);
  return j;
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.top_k = j.value("top_k", c.top_k);
  c.synonym_threshold = j.value("synonym_threshold", c.synonym_threshold);
  if (j.contains("betas")) {
    const auto b = j.at("betas").get<std::vector<double>>();
    if (b.size() != 3) throw ConfigError("betas needs three values");
    c.betas = {b[0], b[1], b[2]};
  }
  c.max_modification_rate = j.value("max_modification_rate", c.max_modification_rate);
  if (j.contains("max_steps") && !j.at("max_steps").is_null()) c.max_steps = j.at("max_steps").get<std::size_t>();
  const auto objective = j.value("objective", std::string("instant"));
  if (objective == "instant") {
    c.objective = SubstitutionObjective::kInstantReward;
  } else if (objective == "attack-only") {
    c.objective = SubstitutionObjective::kAttackRewardOnly;
  } else {
    throw ConfigError("unknown substitution objective '" + objective + "'");
  }
  c.max_words = j.value("max_words", c.max_words);
  if (c.top_k == 0) throw ConfigError("top_k must be >= 1");
  if (c.synonym_threshold < 0.0 || c.synonym_threshold > 1.0) throw ConfigError("synonym_threshold outside [0, 1]");
  if (!(c.max_modification_rate > 0.0 && c.max_modification_rate <= 1.0)) throw ConfigError("max_modification_rate outside (0, 1]");
  if (c.max_words == 0) throw ConfigError("max_words must be >= 1");
  return c;
}

std::string_view to_string(TerminalKind kind) {
  return kind == TerminalKind::kSuccess ? "success" : "failure";
}

std::size_t AttackState::modified_count() const {
  return static_cast<std::size_t>(std::count(modified.begin(), modified.end(), std::uint8_t{1}));
}

std::vector<std::string> AttackState::fields_with(const WordSequence& field) const {
  auto fields = sample.fields;
  fields.at(sample.attack_field) = field.text();
  return fields;
}

std::size_t max_admissible_edits(std::size_t n, double rate) {
  const double limit = rate * static_cast<double>(n);
  const auto k = static_cast<long long>(std::ceil(limit - 1e-9)) - 1;
  return static_cast<std::size_t>(std::max(0LL, k));
}

namespace {

std::string match_case(const std::string& model, const std::string& word) {
  if (model.empty() || word.empty()) return word;
  auto upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; };
  std::string out = word;
  const bool all_upper = model.size() > 1 && std::all_of(model.begin(), model.end(), [&](char c) {
                           return !std::isalpha(static_cast<unsigned char>(c)) || upper(c);
                         });
  if (all_upper) {
    for (char& c : out) {
      if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::toupper(c));
    }
  } else if (upper(model[0]) && static_cast<unsigned char>(out[0]) < 0x80) {
    out[0] = static_cast<char>(std::toupper(out[0]));
  }
  return out;
}

}  // namespace

AttackEnv::AttackEnv(Resources resources, AttackConfig config) : res_(resources), config_(config) {}

std::vector<double> AttackEnv::query(AttackState& state, const WordSequence& field) const {
  ++state.query_count;
  return predict(res_.victim, state.fields_with(field));
}

AttackState AttackEnv::reset(const Sample& sample) const {
  AttackState s;
  s.sample = sample;
  WordSequence field = tokenize_words(sample.fields.at(sample.attack_field));
  if (field.size() > config_.max_words) {
    field = field.truncated(config_.max_words);
    s.truncated = true;
    s.sample.fields[sample.attack_field] = field.text();
  }
  s.original = field;
  s.current = field;
  const std::size_t n = field.size();
  s.modified.assign(n, 0);
  s.protected_word.assign(n, 0);
  s.has_synonyms.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_protected(res_.protection, field[i])) {
      s.protected_word[i] = 1;
      s.modified[i] = 1;
    } else {
      s.has_synonyms[i] = !synonyms(res_.embeddings, to_lower(field[i]), config_.top_k,
                                    config_.synonym_threshold)
                               .candidates.empty();
    }
  }
  s.max_steps = config_.max_steps.value_or(
      static_cast<std::size_t>(std::ceil(0.4 * static_cast<double>(n) - 1e-9)));
  s.max_edits = max_admissible_edits(n, config_.max_modification_rate);
  s.probs = query(s, s.current);
  s.gold_prob = s.probs.at(sample.gold);
  if (s.predicted_label() != sample.gold) throw SkippedSample(sample.id);
  return s;
}

std::optional<TerminalSignal> AttackEnv::terminal_check(const AttackState& s) const {
  if (s.predicted_label() != s.sample.gold) return TerminalSignal{TerminalKind::kSuccess, "prediction-flipped"};
  bool editable = false;
  bool actionable = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.in_modified_set(i)) continue;
    editable = true;
    if (s.has_synonyms[i]) actionable = true;
  }
  if (!editable) return TerminalSignal{TerminalKind::kFailure, "all-words-in-W"};
  if (s.step >= s.max_steps) return TerminalSignal{TerminalKind::kFailure, "max-steps"};
  if (s.edits >= s.max_edits) return TerminalSignal{TerminalKind::kFailure, "modification-budget"};
  if (!actionable) return TerminalSignal{TerminalKind::kFailure, "no-legal-action"};
  return std::nullopt;
}

std::vector<SynonymCandidate> AttackEnv::candidates(const AttackState& s, std::size_t i) const {
  if (i >= s.size()) throw std::out_of_range("candidates: word index");
  const std::string& source = s.current[i];
  auto set = synonyms(res_.embeddings, to_lower(source), config_.top_k, config_.synonym_threshold);
  std::vector<SynonymCandidate> out;
  for (auto& c : set.candidates) {
    std::string cased = match_case(source, c.word);
    if (cased == source) continue;
    if (!pos_compatible(res_.tagger, source, cased, s.current, i, res_.diagnostics)) continue;
    out.push_back({std::move(cased), c.score});
  }
  return out;
}

double attack_reward(const AttackState& prev, const AttackState& curr,
                     const std::optional<TerminalSignal>& terminal) {
  if (terminal) return terminal->value();
  return prev.gold_prob - curr.gold_prob;
}

StepOutcome AttackEnv::transition(const AttackState& s, std::size_t word, const std::string& replacement,
                                  std::vector<double> probs) const {
  StepOutcome out{s, {}, std::nullopt};
  AttackState& next = out.state;
  next.current = s.current.with_word(word, replacement);
  next.modified[word] = 1;
  next.step = s.step + 1;
  next.edits = s.edits - (s.current[word] != s.original[word]) + (replacement != s.original[word]);
  next.probs = std::move(probs);
  next.gold_prob = next.probs.at(s.sample.gold);
  next.trace.push_back({word, s.current[word], replacement});

  out.terminal = terminal_check(next);
  const double r_att = attack_reward(s, next, out.terminal);
  const double r_flu = fluency_reward(res_.fluency, s.current, next.current);
  const double r_sim = similarity_reward(res_.similarity, s.original, s.current, next.current);
  out.reward = RewardBreakdown::make(config_.betas, r_att, r_flu, r_sim);
  return out;
}

StepOutcome AttackEnv::step(const AttackState& s, const StepAction& action) const {
  if (action.word >= s.size()) throw IllegalAction("word index " + std::to_string(action.word) + " out of range");
  if (s.in_modified_set(action.word)) {
    throw IllegalAction("word " + std::to_string(action.word) + " ('" + s.current[action.word] +
                        "') is protected or already modified");
  }
  AttackState charged = s;
  auto probs = query(charged, s.current.with_word(action.word, action.substitution));
  return transition(charged, action.word, action.substitution, std::move(probs));
}

StepOutcome AttackEnv::skip(const AttackState& s, std::size_t word) const {
  if (word >= s.size() || s.in_modified_set(word)) {
    throw IllegalAction("cannot skip word " + std::to_string(word));
  }
  StepOutcome out{s, {}, std::nullopt};
  out.state.modified[word] = 1;
  out.terminal = terminal_check(out.state);
  out.reward = RewardBreakdown::make(config_.betas, out.terminal ? out.terminal->value() : 0.0, 0.0, 0.0);
  return out;
}

}  // namespace seqattack
