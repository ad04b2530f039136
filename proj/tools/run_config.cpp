#include "run_config.hpp"

#include <fstream>
#include <set>

#include "seqattack/errors.hpp"

namespace seqattack::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

json path_or_null(const std::string& p) { return p.empty() ? json() : json(p); }

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["task"] = c.task;
  j["labels"] = c.labels;
  j["attack_field"] = c.attack_field ? json(*c.attack_field) : json();
  j["data"] = {{"train", path_or_null(c.train_data)},
               {"valid", path_or_null(c.valid_data)},
               {"attack", path_or_null(c.attack_data)}};
  j["embeddings"] = path_or_null(c.embeddings);
  j["pos_lexicon"] = path_or_null(c.pos_lexicon);
  j["stopwords"] = path_or_null(c.stopwords);
  j["victim_checkpoint"] = path_or_null(c.victim_checkpoint);
  j["policy_checkpoint"] = path_or_null(c.policy_checkpoint);
  j["lm"] = {{"corpus", path_or_null(c.lm_corpus)}, {"discount", c.lm_discount}};
  j["tokenizer"] = {{"min_piece_count", c.min_piece_count}};
  j["victim"] = to_json(c.victim);
  j["attack"] = to_json(c.attack);
  j["train"] = to_json(c.train);
  j["eval"] = {{"limit", c.limit ? json(*c.limit) : json()}, {"jobs", c.jobs}};
  j["seed"] = c.seed;
  j["out"] = c.out;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j,
                 {"task", "labels", "attack_field", "data", "embeddings", "pos_lexicon", "stopwords",
                  "victim_checkpoint", "policy_checkpoint", "lm", "tokenizer", "victim", "attack", "train", "eval",
                  "seed", "out"},
                 "config");
  read(j, "task", c.task, "config");
  read(j, "labels", c.labels, "config");
  if (j.contains("attack_field") && !j["attack_field"].is_null()) {
    std::size_t f = 0;
    read(j, "attack_field", f, "config");
    c.attack_field = f;
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"train", "valid", "attack"}, "data");
    read(d, "train", c.train_data, "data");
    read(d, "valid", c.valid_data, "data");
    read(d, "attack", c.attack_data, "data");
  }
  read(j, "embeddings", c.embeddings, "config");
  read(j, "pos_lexicon", c.pos_lexicon, "config");
  read(j, "stopwords", c.stopwords, "config");
  read(j, "victim_checkpoint", c.victim_checkpoint, "config");
  read(j, "policy_checkpoint", c.policy_checkpoint, "config");
  if (j.contains("lm")) {
    reject_unknown(j["lm"], {"corpus", "discount"}, "lm");
    read(j["lm"], "corpus", c.lm_corpus, "lm");
    read(j["lm"], "discount", c.lm_discount, "lm");
    if (!(c.lm_discount > 0.0 && c.lm_discount < 1.0)) throw ConfigError("lm.discount must be in (0, 1)");
  }
  if (j.contains("tokenizer")) {
    reject_unknown(j["tokenizer"], {"min_piece_count"}, "tokenizer");
    read(j["tokenizer"], "min_piece_count", c.min_piece_count, "tokenizer");
  }
  try {
    if (j.contains("victim")) c.victim = victim_config_from_json(j["victim"]);
    if (j.contains("attack")) c.attack = attack_config_from_json(j["attack"]);
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown(e, {"limit", "jobs"}, "eval");
    if (e.contains("limit") && !e["limit"].is_null()) {
      std::size_t l = 0;
      read(e, "limit", l, "eval");
      c.limit = l;
    }
    read(e, "jobs", c.jobs, "eval");
    if (c.jobs == 0) throw ConfigError("eval.jobs must be at least 1");
  }
  read(j, "seed", c.seed, "config");
  read(j, "out", c.out, "config");
  try {
    parse_task_kind(c.task);
    LabelSpace check(c.labels);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + " path");
  if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

std::vector<std::vector<std::string>> lowered_texts(const std::vector<Sample>& samples) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : samples) {
    for (const auto& f : s.fields) out.push_back(tokenize_words(f).lowered());
  }
  return out;
}

}  // namespace

std::unique_ptr<World> load_world(const RunConfig& c) {
  auto w = std::make_unique<World>();
  w->labels = LabelSpace(c.labels);
  w->task = parse_task_kind(c.task);
  require_file(c.embeddings, "embeddings");
  w->embeddings = load_embeddings(c.embeddings);
  if (!c.stopwords.empty()) {
    require_file(c.stopwords, "stopwords");
    w->protection = ProtectedWordPolicy::from_file(c.stopwords);
  }
  if (!c.pos_lexicon.empty()) {
    require_file(c.pos_lexicon, "pos lexicon");
    w->tagger.load_lexicon(c.pos_lexicon);
  }
  const std::string lm_path = c.lm_corpus.empty() ? c.train_data : c.lm_corpus;
  const auto lm_samples = load_split(c, *w, lm_path, "lm corpus");
  w->lm = std::make_unique<TrigramLm>(TrigramLm::fit(lowered_texts(lm_samples), c.lm_discount));
  w->similarity = std::make_unique<EmbeddingSimilarity>(w->embeddings, w->protection);
  return w;
}

std::vector<Sample> load_split(const RunConfig& c, const World& w, const std::string& path, const char* what) {
  require_file(path, what);
  return load_dataset(path, w.task, w.labels, c.attack_field);
}

AttackEnv make_env(const World& w, const VictimModel& victim, const AttackConfig& config) {
  AttackEnv::Resources r{victim, w.embeddings, w.protection, w.tagger, *w.lm, *w.similarity,
                         const_cast<Diagnostics*>(&w.diagnostics)};
  return AttackEnv(r, config);
}

}  // namespace seqattack::cli
