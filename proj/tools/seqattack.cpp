// seqattack: synthetic data, victim fitting, agent training, attacks, reports.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "run_config.hpp"
#include "seqattack/errors.hpp"
#include "seqattack/eval.hpp"
#include "seqattack/synth.hpp"
#include "seqattack/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqattack;
using namespace seqattack::cli;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

struct Overrides {
  std::string config;
  std::string train_data, valid_data, attack_data;
  std::string embeddings, pos_lexicon, stopwords;
  std::string victim, policy, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs, limit, episodes, top_k, batch_size;
  std::optional<double> lr, gamma, threshold, max_mod_rate;
  std::string objective;
  bool ema_baseline = false;
  bool fine_tune = false;
};

void write_json(const fs::path& path, const json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write " + tmp);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

// Relative paths inside a config file resolve against the file's directory.
void rebase(std::string& p, const fs::path& base) {
  if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  std::string config_path = o.config;
  if (config_path.empty()) {
    if (const char* env = std::getenv("SEQATTACK_CONFIG")) config_path = env;
  }
  if (!config_path.empty()) {
    c = load_run_config(config_path);
    const fs::path base = fs::absolute(config_path).parent_path();
    for (auto* p : {&c.train_data, &c.valid_data, &c.attack_data, &c.embeddings, &c.pos_lexicon, &c.stopwords,
                    &c.victim_checkpoint, &c.policy_checkpoint, &c.lm_corpus}) {
      rebase(*p, base);
    }
  }
  auto set = [](std::string& dst, const std::string& src) {
    if (!src.empty()) dst = src;
  };
  set(c.train_data, o.train_data);
  set(c.valid_data, o.valid_data);
  set(c.attack_data, o.attack_data);
  set(c.embeddings, o.embeddings);
  set(c.pos_lexicon, o.pos_lexicon);
  set(c.stopwords, o.stopwords);
  set(c.victim_checkpoint, o.victim);
  set(c.policy_checkpoint, o.policy);
  set(c.out, o.out);
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  if (o.jobs) c.jobs = *o.jobs;
  if (o.limit) c.limit = *o.limit;
  if (o.episodes) c.train.episodes = *o.episodes;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.gamma) c.train.gamma = *o.gamma;
  if (o.ema_baseline) c.train.baseline = true;
  if (o.fine_tune) c.train.fine_tune_encoder = true;
  if (o.top_k) c.attack.top_k = *o.top_k;
  if (o.threshold) c.attack.synonym_threshold = *o.threshold;
  if (o.max_mod_rate) c.attack.max_modification_rate = *o.max_mod_rate;
  if (!o.objective.empty()) {
    json a = to_json(c.attack);
    a["objective"] = o.objective;
    c.attack = attack_config_from_json(a);
  }
  // Round-trip through JSON so flag values get the same validation as files.
  return run_config_from_json(to_json(c));
}

void write_run_files(const fs::path& dir, const RunConfig& c, const std::string& command) {
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", to_json(c));
  write_json(dir / "run.json",
             {{"command", command}, {"seed", c.seed}, {"version", kVersion}, {"git", kGitDescribe}});
}

std::vector<std::vector<std::string>> corpus_words(const std::vector<Sample>& samples) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : samples) out.push_back(tokenize_words(s.fields[s.attack_field]).lowered());
  return out;
}

LinearVictim load_victim(const RunConfig& c) {
  if (c.victim_checkpoint.empty()) throw ConfigError("missing victim checkpoint path (--victim)");
  if (!fs::exists(c.victim_checkpoint)) throw ConfigError("victim checkpoint not found: " + c.victim_checkpoint);
  return LinearVictim::load(c.victim_checkpoint);
}

// A policy file is either a bare policy or a training checkpoint wrapping one.
WordFinderPolicy load_policy(const std::string& path, const EmbeddingIndex& embeddings) {
  if (path.empty()) throw ConfigError("missing policy checkpoint path (--policy)");
  std::ifstream in(path);
  if (!in) throw ConfigError("policy checkpoint not found: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("policy checkpoint " + path + ": " + e.what());
  }
  if (j.contains("policy") && j.contains("progress")) return WordFinderPolicy::from_json(j["policy"], embeddings);
  return WordFinderPolicy::from_json(j, embeddings);
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, const SynthConfig& sc) {
  const fs::path dir = out;
  write_synth_world(dir, sc);
  for (auto domain : {SynthDomain::kMovies, SynthDomain::kProducts}) {
    const std::string name(to_string(domain));
    RunConfig c;
    c.train_data = name + "/train.tsv";
    c.valid_data = name + "/valid.tsv";
    c.attack_data = name + "/attack.tsv";
    c.embeddings = "embeddings.txt";
    c.pos_lexicon = "pos_lexicon.tsv";
    c.victim_checkpoint = "runs/" + name + "/victim/victim.json";
    c.policy_checkpoint = "runs/" + name + "/agent/policy.json";
    c.out = "runs/" + name;
    write_json(dir / (name + ".json"), to_json(c));
  }
  write_json(dir / "synth.json", {{"seed", sc.seed},
                                  {"dim", sc.dim},
                                  {"train", sc.train},
                                  {"valid", sc.valid},
                                  {"attack", sc.attack},
                                  {"version", kVersion},
                                  {"git", kGitDescribe}});
  std::printf("wrote synthetic world to %s\n", dir.string().c_str());
  return 0;
}

int cmd_fit_victim(const RunConfig& c) {
  const LabelSpace labels(c.labels);
  const TaskKind task = parse_task_kind(c.task);
  if (c.train_data.empty()) throw ConfigError("missing training data path (--train-data)");
  if (!fs::exists(c.train_data)) throw ConfigError("training data not found: " + c.train_data);
  const auto train = load_dataset(c.train_data, task, labels, c.attack_field);
  std::vector<Sample> valid;
  if (!c.valid_data.empty()) {
    if (!fs::exists(c.valid_data)) throw ConfigError("validation data not found: " + c.valid_data);
    valid = load_dataset(c.valid_data, task, labels, c.attack_field);
  }
  const LinearVictim victim = fit_reference_victim(train, labels, task, c.victim, valid.empty() ? nullptr : &valid);
  const fs::path dir = c.out;
  write_run_files(dir, c, "fit-victim");
  victim.save(dir / "victim.json");
  json metrics = {{"train_accuracy", victim.train_accuracy}, {"n_train", train.size()}, {"n_valid", valid.size()}};
  metrics["valid_accuracy"] = victim.valid_accuracy ? json(*victim.valid_accuracy) : json();
  write_json(dir / "metrics.json", metrics);
  std::printf("train accuracy %.4f", victim.train_accuracy);
  if (victim.valid_accuracy) std::printf("  valid accuracy %.4f", *victim.valid_accuracy);
  std::printf("\nwrote %s\n", (dir / "victim.json").string().c_str());
  return 0;
}

// Keeps the first `lines` lines of a JSONL file.
void truncate_lines(const fs::path& path, std::size_t lines) {
  std::ifstream in(path);
  std::string kept, line;
  for (std::size_t i = 0; i < lines && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

int cmd_train(const RunConfig& c, bool resume, std::size_t checkpoint_every) {
  auto world = load_world(c);
  const LinearVictim victim = load_victim(c);
  const auto train_set = load_split(c, *world, c.train_data, "training data");
  const AttackEnv env = make_env(*world, victim, c.attack);
  const fs::path dir = c.out;
  const fs::path checkpoint = dir / "checkpoint.json";
  const fs::path log_path = dir / "train_log.jsonl";

  TrainHooks hooks;
  std::optional<WordFinderPolicy> policy;
  if (resume) {
    if (!fs::exists(checkpoint)) throw ConfigError("nothing to resume: " + checkpoint.string() + " is missing");
    std::ifstream in(checkpoint);
    json j;
    in >> j;
    policy.emplace(WordFinderPolicy::from_json(j.at("policy"), world->embeddings));
    hooks.resume = train_progress_from_json(j.at("progress"));
    truncate_lines(log_path, hooks.resume->episode);
    std::printf("resuming after episode %zu\n", hooks.resume->episode);
  } else {
    policy.emplace(WordFinderPolicy::initial(
        world->embeddings, WordPieceTokenizer::from_corpus(corpus_words(train_set), c.min_piece_count), c.seed,
        c.train.fine_tune_encoder));
    std::ofstream(log_path, std::ios::trunc);
  }
  write_run_files(dir, c, resume ? "train --resume" : "train");

  const json echo = to_json(c);
  std::ofstream log(log_path, std::ios::app);
  hooks.on_episode = [&](const TrainRecord& r) {
    log << to_json(r).dump() << "\n" << std::flush;
    std::printf("episode %zu/%zu  return %+.4f  %s  steps %zu  queries %zu\n", r.episode + 1, c.train.episodes, r.ret,
                r.success ? "success" : "failure", r.steps, r.queries);
  };
  std::size_t updates = 0;
  hooks.on_checkpoint = [&](const WordFinderPolicy& p, const TrainProgress& progress) {
    if (++updates % checkpoint_every != 0 && progress.episode != c.train.episodes) return;
    log.flush();
    write_json(checkpoint, {{"policy", p.to_json(echo)}, {"progress", to_json(progress)}});
  };
  const TrainResult result = train(*policy, env, train_set, c.train, hooks);
  policy->save(dir / "policy.json", echo);

  std::size_t successes = 0;
  for (const auto& r : result.log) successes += r.success;
  std::printf("episodes %zu  updates %zu  eligible %zu  training successes %zu\n", result.log.size(),
              result.updates, result.eligible, successes);
  std::printf("wrote %s\n", (dir / "policy.json").string().c_str());
  return 0;
}

EvalOptions eval_options(const RunConfig& c, const std::string& tag) {
  EvalOptions o;
  o.jobs = c.jobs;
  o.limit = c.limit;
  o.seed = c.seed;
  o.tag = tag;
  o.config_echo = to_json(c);
  o.limits.max_modification_rate = c.attack.max_modification_rate;
  return o;
}

void emit(const AttackReport& report, const fs::path& dir, const RunConfig& c, const std::string& command) {
  write_run_files(dir, c, command);
  write_report(report, dir);
  std::cout << summary_table({report});
}

struct AttackFlags {
  bool baseline = false;
  bool random = false;
  bool random_control = false;
  std::string transfer;
  bool adv_train = false;
  std::string tag;
};

int cmd_attack(const RunConfig& c, const AttackFlags& f) {
  if ((f.baseline + f.random + f.random_control) > 1) throw ConfigError("choose one of --baseline, --random, --random-control");
  auto world = load_world(c);
  const LinearVictim victim = load_victim(c);
  const auto attack_set = load_split(c, *world, c.attack_data, "attack data");
  const AttackEnv env = make_env(*world, victim, c.attack);
  const fs::path dir = c.out;
  const std::string tag = f.tag.empty() ? fs::path(c.attack_data).parent_path().filename().string() : f.tag;

  if (!f.transfer.empty()) {
    const auto colon = f.transfer.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == f.transfer.size()) {
      throw ConfigError("--transfer expects SOURCE:TARGET");
    }
    const auto policy = load_policy(c.policy_checkpoint, world->embeddings);
    const auto tr = evaluate_transfer(policy, env, attack_set, f.transfer.substr(0, colon),
                                      f.transfer.substr(colon + 1), eval_options(c, tag));
    write_run_files(dir, c, "attack --transfer " + f.transfer);
    write_report(tr.agent, dir / "agent");
    write_report(tr.random, dir / "random");
    std::cout << summary_table({tr.agent, tr.random});
    return 0;
  }

  if (f.adv_train) {
    const auto policy = load_policy(c.policy_checkpoint, world->embeddings);
    const auto train_set = load_split(c, *world, c.train_data, "training data");
    std::vector<Sample> valid;
    if (!c.valid_data.empty()) valid = load_split(c, *world, c.valid_data, "validation data");
    // Harvest adversaries from the training split, then refit.
    EvalOptions harvest = eval_options(c, tag + "-train");
    harvest.limit.reset();
    const auto mined = attack_corpus(policy, env, train_set, harvest);
    const auto adversaries = adversarial_samples(mined, train_set);
    const auto attack = [&](const VictimModel& v) {
      return attack_corpus(policy, make_env(*world, v, c.attack), attack_set, eval_options(c, tag));
    };
    auto result = adversarial_training(victim, train_set, adversaries, valid, attack);
    result.after.tag = tag + "-adv";
    write_run_files(dir, c, "attack --adv-train");
    write_report(result.before, dir / "before");
    write_report(result.after, dir / "after");
    result.victim.save(dir / "victim_adv.json");
    write_json(dir / "adv_training.json", {{"adversaries", result.adversaries},
                                           {"accuracy_before", result.accuracy_before},
                                           {"accuracy_after", result.accuracy_after},
                                           {"a_rate_before", result.before.a_rate},
                                           {"a_rate_after", result.after.a_rate}});
    std::cout << summary_table({result.before, result.after});
    std::printf("adversaries %zu  clean accuracy %.4f -> %.4f\n", result.adversaries, result.accuracy_before,
                result.accuracy_after);
    return 0;
  }

  AttackReport report;
  const auto opts = eval_options(c, tag);
  if (f.baseline) {
    report = greedy_baseline_attack(env, attack_set, opts);
  } else if (f.random) {
    report = run_attack(env, attack_set, AttackMethod::kRandomFinder, nullptr, opts);
  } else if (f.random_control) {
    report = run_attack(env, attack_set, AttackMethod::kRandomControl, nullptr, opts);
  } else {
    const auto policy = load_policy(c.policy_checkpoint, world->embeddings);
    report = attack_corpus(policy, env, attack_set, opts);
  }
  emit(report, dir, c, "attack");
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs) {
  std::vector<AttackReport> reports;
  for (const auto& d : dirs) {
    if (!fs::exists(fs::path(d) / "report.json")) throw ConfigError("no report.json in " + d);
    reports.push_back(read_report(d));
  }
  std::cout << summary_table(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential word-substitution attacks on text classifiers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion) + " (" + kGitDescribe + ")");

  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run config (default: $SEQATTACK_CONFIG)");
    sub->add_option("--train-data", o.train_data, "label<TAB>text training split");
    sub->add_option("--valid-data", o.valid_data, "validation split");
    sub->add_option("--attack-data", o.attack_data, "split to attack");
    sub->add_option("--embeddings", o.embeddings, "word vectors, one 'word v1 ... vd' per line");
    sub->add_option("--pos-lexicon", o.pos_lexicon, "word<TAB>TAG lines for the tagger");
    sub->add_option("--stopwords", o.stopwords, "one protected word per line");
    sub->add_option("--victim", o.victim, "victim checkpoint");
    sub->add_option("--policy", o.policy, "agent checkpoint");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed for every random stream of the run");
    sub->add_option("--jobs", o.jobs, "parallel attack workers");
    sub->add_option("--limit", o.limit, "attack only the first N eligible samples");
    sub->add_option("--episodes", o.episodes, "training episodes");
    sub->add_option("--batch-size", o.batch_size, "episodes per update");
    sub->add_option("--lr", o.lr, "learning rate");
    sub->add_option("--gamma", o.gamma, "discount factor");
    sub->add_option("--ema-baseline", o.ema_baseline, "subtract a moving-average return baseline");
    sub->add_flag("--fine-tune-encoder", o.fine_tune, "train the encoder along with the head");
    sub->add_option("--top-k", o.top_k, "synonym candidates per word");
    sub->add_option("--threshold", o.threshold, "minimum synonym cosine");
    sub->add_option("--max-mod-rate", o.max_mod_rate, "modification budget as a fraction of words");
    sub->add_option("--objective", o.objective, "substitution key: instant or attack-only");
  };

  SynthConfig sc;
  std::string synth_out = "data/synth";
  auto* synth = app.add_subcommand("synth", "write the synthetic sentiment world");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--dim", sc.dim, "embedding dimension");
  synth->add_option("--train-size", sc.train, "training sentences per domain");
  synth->add_option("--valid-size", sc.valid, "validation sentences per domain");
  synth->add_option("--attack-size", sc.attack, "attack sentences per domain");

  auto* fit = app.add_subcommand("fit-victim", "fit the reference linear victim");
  add_common(fit);

  bool resume = false;
  std::size_t checkpoint_every = 1;
  auto* trn = app.add_subcommand("train", "train the word-finder agent with REINFORCE");
  add_common(trn);
  trn->add_flag("--resume", resume, "continue from <out>/checkpoint.json");
  trn->add_option("--checkpoint-every", checkpoint_every, "updates between checkpoints")->check(CLI::PositiveNumber);

  AttackFlags af;
  auto* atk = app.add_subcommand("attack", "attack a split and write a report");
  add_common(atk);
  atk->add_flag("--baseline", af.baseline, "greedy deletion-importance baseline");
  atk->add_flag("--random", af.random, "uniform word finder with greedy substitution");
  atk->add_flag("--random-control", af.random_control, "uniform word finder with random substitution");
  atk->add_option("--transfer", af.transfer, "SOURCE:TARGET; agent vs random control on the target");
  atk->add_flag("--adv-train", af.adv_train, "refit the victim on mined adversaries and re-attack");
  atk->add_option("--tag", af.tag, "dataset tag in reports (default: attack split's directory)");

  std::vector<std::string> report_dirs;
  auto* rep = app.add_subcommand("report", "print the summary table of report directories");
  rep->add_option("dirs", report_dirs, "report directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_out, sc);
    if (*rep) return cmd_report(report_dirs);
    const RunConfig c = resolve(o);
    if (*fit) return cmd_fit_victim(c);
    if (*trn) return cmd_train(c, resume, checkpoint_every);
    if (*atk) return cmd_attack(c, af);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const DegenerateData& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const EmptyInput& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return kExitTraining;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
