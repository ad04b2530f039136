#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqattack/env.hpp"
#include "seqattack/lexicon.hpp"
#include "seqattack/scorers.hpp"
#include "seqattack/trainer.hpp"
#include "seqattack/victim.hpp"

namespace seqattack::cli {

/// The resolved configuration of one run. Paths are kept as given; relative
/// paths resolve against the working directory.
struct RunConfig {
  std::string task = "classification";
  std::vector<std::string> labels = {"negative", "positive"};
  std::optional<std::size_t> attack_field;
  std::string train_data, valid_data, attack_data;
  std::string embeddings;
  std::string pos_lexicon;
  std::string stopwords;
  std::string victim_checkpoint;
  std::string policy_checkpoint;
  std::string lm_corpus;  // defaults to train_data
  double lm_discount = 0.75;
  std::size_t min_piece_count = 1;
  VictimConfig victim;
  AttackConfig attack;
  TrainConfig train;
  std::optional<std::size_t> limit;
  std::size_t jobs = 1;
  std::uint64_t seed = 1;
  std::string out = "run";
};

nlohmann::json to_json(const RunConfig& c);
/// Throws ConfigError on unknown keys or bad values.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Everything an attack environment borrows, owned in one place.
struct World {
  LabelSpace labels;
  TaskKind task = TaskKind::kClassification;
  EmbeddingIndex embeddings;
  ProtectedWordPolicy protection;
  RuleBasedTagger tagger;
  std::unique_ptr<TrigramLm> lm;
  std::unique_ptr<EmbeddingSimilarity> similarity;
  Diagnostics diagnostics;
};

/// Loads embeddings, stop words, POS lexicon and fits the LM.
std::unique_ptr<World> load_world(const RunConfig& c);

std::vector<Sample> load_split(const RunConfig& c, const World& w, const std::string& path, const char* what);

AttackEnv make_env(const World& w, const VictimModel& victim, const AttackConfig& config);

}  // namespace seqattack::cli
