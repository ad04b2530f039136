#include "seqattack/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "seqattack/errors.hpp"

namespace seqattack {

double modification_rate(const WordSequence& original, const WordSequence& adversary) {
  if (original.empty()) return 0.0;
  const std::size_t n = std::min(original.size(), adversary.size());
  std::size_t changed = std::max(original.size(), adversary.size()) - n;
  for (std::size_t i = 0; i < n; ++i) changed += original[i] != adversary[i];
  return static_cast<double>(changed) / static_cast<double>(original.size());
}

ConstraintCheck enforce_constraints(const WordSequence& original, const WordSequence& adversary,
                                    const std::vector<Substitution>& trace, const EmbeddingIndex& embeddings,
                                    const ProtectedWordPolicy& protection, const PosTagger& tagger,
                                    const ConstraintLimits& limits) {
  ConstraintCheck check;
  check.modification_rate = modification_rate(original, adversary);
  bool mod = check.modification_rate >= limits.max_modification_rate && check.modification_rate > 0.0;
  bool pos = false, stop = false, dist = false, mismatch = original.size() != adversary.size();

  if (!mismatch) {
    for (std::size_t i = 0; i < original.size(); ++i) {
      if (original[i] != adversary[i] && is_protected(protection, original[i])) stop = true;
    }
    WordSequence current = original;
    for (const auto& s : trace) {
      if (s.position >= current.size() || current[s.position] != s.from) {
        mismatch = true;
        break;
      }
      if (is_protected(protection, s.from)) stop = true;
      const auto cos = embeddings.cosine(to_lower(s.from), to_lower(s.to));
      if (!cos || *cos < limits.min_cosine) dist = true;
      if (!pos_compatible(tagger, s.from, s.to, current, s.position)) pos = true;
      current = current.with_word(s.position, s.to);
    }
    if (!mismatch && current.words() != adversary.words()) mismatch = true;
  }

  if (mod) check.reasons.emplace_back(kMaxModification);
  if (pos) check.reasons.emplace_back(kPosMismatch);
  if (stop) check.reasons.emplace_back(kStopWordAltered);
  if (dist) check.reasons.emplace_back(kEmbeddingDistance);
  if (mismatch) check.reasons.emplace_back(kTraceMismatch);
  check.pass = check.reasons.empty();
  return check;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json trace_json(const std::vector<Substitution>& trace) {
  auto out = nlohmann::json::array();
  for (const auto& s : trace) out.push_back({{"position", s.position}, {"from", s.from}, {"to", s.to}});
  return out;
}

std::vector<Substitution> trace_from_json(const nlohmann::json& j) {
  std::vector<Substitution> out;
  for (const auto& s : j) out.push_back({s.at("position").get<std::size_t>(), s.at("from"), s.at("to")});
  return out;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const AttackResult& r) {
  return {
      {"sample_id", r.sample_id},
      {"skipped", r.skipped},
      {"flipped", r.flipped},
      {"success", r.success},
      {"gold", r.gold},
      {"final_label", r.final_label},
      {"original", r.original.text()},
      {"adversary", r.adversary.text()},
      {"modification_rate", r.modification_rate},
      {"similarity", r.similarity},
      {"steps", r.steps},
      {"query_count", r.query_count},
      {"trace", trace_json(r.trace)},
      {"violations", r.violations},
      {"terminal_reason", r.terminal_reason},
      {"truncated", r.truncated},
  };
}

AttackResult attack_result_from_json(const nlohmann::json& j) {
  AttackResult r;
  r.sample_id = j.at("sample_id");
  r.skipped = j.at("skipped");
  r.flipped = j.at("flipped");
  r.success = j.at("success");
  r.gold = j.at("gold");
  r.final_label = j.at("final_label");
  const auto original = j.at("original").get<std::string>();
  const auto adversary = j.at("adversary").get<std::string>();
  if (!original.empty()) r.original = tokenize_words(original);
  if (!adversary.empty()) r.adversary = tokenize_words(adversary);
  r.modification_rate = j.at("modification_rate");
  r.similarity = j.at("similarity");
  r.steps = j.at("steps");
  r.query_count = j.at("query_count");
  r.trace = trace_from_json(j.at("trace"));
  r.violations = j.at("violations").get<std::vector<std::string>>();
  r.terminal_reason = j.at("terminal_reason");
  r.truncated = j.at("truncated");
  return r;
}

void aggregate(AttackReport& report) {
  report.n_total = report.results.size();
  report.n_skipped = report.n_eligible = report.n_success = report.n_rejected = 0;
  double mod = 0.0, sim = 0.0, queries = 0.0, queries_success = 0.0, steps = 0.0;
  for (const auto& r : report.results) {
    if (r.skipped) {
      ++report.n_skipped;
      continue;
    }
    ++report.n_eligible;
    queries += static_cast<double>(r.query_count);
    steps += static_cast<double>(r.steps);
    if (r.success) {
      ++report.n_success;
      mod += r.modification_rate;
      sim += r.similarity;
      queries_success += static_cast<double>(r.query_count);
    } else if (r.flipped) {
      ++report.n_rejected;
    }
  }
  auto mean = [](double total, std::size_t n) { return n ? total / static_cast<double>(n) : 0.0; };
  report.a_rate = mean(static_cast<double>(report.n_success), report.n_eligible);
  report.mean_mod = mean(mod, report.n_success);
  report.mean_sim = mean(sim, report.n_success);
  report.mean_queries = mean(queries, report.n_eligible);
  report.mean_queries_success = mean(queries_success, report.n_success);
  report.mean_steps = mean(steps, report.n_eligible);
}

nlohmann::json report_json(const AttackReport& r) {
  return {
      {"format", "seqattack-report"},
      {"version", 1},
      {"method", r.method},
      {"tag", r.tag},
      {"similarity_scorer", r.similarity_scorer},
      {"n_total", r.n_total},
      {"n_skipped", r.n_skipped},
      {"n_eligible", r.n_eligible},
      {"n_success", r.n_success},
      {"n_rejected", r.n_rejected},
      {"a_rate", r.a_rate},
      {"mean_mod", r.mean_mod},
      {"mean_sim", r.mean_sim},
      {"mean_queries", r.mean_queries},
      {"mean_queries_success", r.mean_queries_success},
      {"mean_steps", r.mean_steps},
      {"config", r.config},
  };
}

void write_report(const AttackReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    out << report_json(report).dump(2) << '\n';
    if (!out) throw Error("failed writing " + (dir / "report.json").string());
  }
  {
    std::ofstream out(dir / "results.jsonl");
    for (const auto& r : report.results) out << to_json(r).dump() << '\n';
    if (!out) throw Error("failed writing " + (dir / "results.jsonl").string());
  }
  std::ofstream out(dir / "summary.txt");
  out << summary_table({report});
}

AttackReport read_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw ConfigError("no report.json in " + dir.string());
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "seqattack-report") throw ConfigError(dir.string() + " does not hold a seqattack report");
  AttackReport r;
  r.method = j.at("method");
  r.tag = j.at("tag");
  r.similarity_scorer = j.at("similarity_scorer");
  r.config = j.at("config");
  std::ifstream lines(dir / "results.jsonl");
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) r.results.push_back(attack_result_from_json(nlohmann::json::parse(line)));
  }
  aggregate(r);
  return r;
}

std::string summary_table(const std::vector<AttackReport>& reports) {
  std::ostringstream s;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-20s %9s %8s %8s %10s %9s\n", "method", "tag", "A-rate(%)", "Mod(%)",
                "Sim", "queries", "eligible");
  s << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-16s %-20s %9s %8s %8s %10s %9zu\n", r.method.c_str(),
                  r.tag.empty() ? "-" : r.tag.c_str(), fmt("%.2f", 100.0 * r.a_rate).c_str(),
                  fmt("%.2f", 100.0 * r.mean_mod).c_str(), fmt("%.4f", r.mean_sim).c_str(),
                  fmt("%.2f", r.mean_queries).c_str(), r.n_eligible);
    s << line;
  }
  if (!reports.empty()) s << "Sim scorer: " << reports.front().similarity_scorer << '\n';
  return s.str();
}

std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::kAgent: return "agent";
    case AttackMethod::kGreedyBaseline: return "greedy-baseline";
    case AttackMethod::kRandomFinder: return "random-finder";
    case AttackMethod::kRandomControl: return "random-control";
  }
  return "?";
}

AttackReport run_attack(const AttackEnv& env, const std::vector<Sample>& corpus, AttackMethod method,
                        const WordFinderPolicy* policy, const EvalOptions& options) {
  if (method == AttackMethod::kAgent && !policy) throw ConfigError("agent attack needs a policy");
  const auto& res = env.resources();

  AttackReport report;
  report.method = std::string(to_string(method));
  report.tag = options.tag;
  report.similarity_scorer = res.similarity.id();
  report.config = options.config_echo;
  report.config["attack"] = to_json(env.config());
  report.config["seed"] = options.seed;
  report.config["victim"] = res.victim.id();

  // Eligibility is decided in corpus order so --limit picks a stable prefix.
  std::vector<std::size_t> slots;  // result index -> corpus index, eligible only
  std::vector<AttackResult>& results = report.results;
  std::size_t eligible = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (options.limit && eligible >= *options.limit) break;
    AttackResult r;
    r.sample_id = corpus[i].id;
    r.gold = corpus[i].gold;
    try {
      AttackState s = env.reset(corpus[i]);
      r.original = s.original;
      r.truncated = s.truncated;
      ++eligible;
      slots.push_back(i);
    } catch (const SkippedSample&) {
      r.skipped = true;
      r.query_count = 1;
      r.original = tokenize_words(corpus[i].fields.at(corpus[i].attack_field));
      r.adversary = r.original;
    }
    results.push_back(std::move(r));
  }
  auto attack_one = [&](std::size_t corpus_idx, AttackResult& r) {
    std::mt19937_64 rng(mix(options.seed ^ mix(corpus_idx)));
    Trajectory t;
    if (method == AttackMethod::kAgent) {
      PolicyFinder finder(*policy, SelectMode::kArgmax);
      t = rollout(env, corpus[corpus_idx], finder, SubstitutionMode::kRewardGreedy, rng);
    } else if (method == AttackMethod::kGreedyBaseline) {
      ImportanceFinder finder;
      t = rollout(env, corpus[corpus_idx], finder, SubstitutionMode::kRewardGreedy, rng);
    } else {
      UniformFinder finder;
      t = rollout(env, corpus[corpus_idx], finder,
                  method == AttackMethod::kRandomFinder ? SubstitutionMode::kRewardGreedy : SubstitutionMode::kRandom,
                  rng);
    }
    r.flipped = t.terminal.success();
    r.final_label = t.final_label;
    r.adversary = t.adversary;
    r.trace = t.trace;
    r.steps = t.edit_steps();
    r.query_count = t.query_count;
    r.terminal_reason = t.terminal.reason;
    r.modification_rate = modification_rate(r.original, r.adversary);
    r.similarity = res.similarity.similarity(r.original, r.adversary);
    const auto check = enforce_constraints(r.original, r.adversary, r.trace, res.embeddings, res.protection,
                                           res.tagger, options.limits);
    r.violations = check.reasons;
    r.success = r.flipped && check.pass;
  };

  // Map eligible corpus indices to their result rows.
  std::vector<std::pair<std::size_t, AttackResult*>> work;
  {
    std::size_t k = 0;
    for (auto& r : results) {
      if (r.skipped) continue;
      work.emplace_back(slots[k++], &r);
    }
  }
  const std::size_t jobs = res.victim.thread_safe() ? std::max<std::size_t>(1, options.jobs) : 1;
  if (jobs == 1 || work.size() < 2) {
    for (auto& [idx, r] : work) attack_one(idx, *r);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < std::min(jobs, work.size()); ++j) {
      pool.emplace_back([&]() {
        for (std::size_t k; (k = next.fetch_add(1)) < work.size();) {
          try {
            attack_one(work[k].first, *work[k].second);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  aggregate(report);
  return report;
}

AttackReport attack_corpus(const WordFinderPolicy& policy, const AttackEnv& env, const std::vector<Sample>& corpus,
                           const EvalOptions& options) {
  return run_attack(env, corpus, AttackMethod::kAgent, &policy, options);
}

AttackReport greedy_baseline_attack(const AttackEnv& env, const std::vector<Sample>& corpus,
                                    const EvalOptions& options) {
  return run_attack(env, corpus, AttackMethod::kGreedyBaseline, nullptr, options);
}

TransferReport evaluate_transfer(const WordFinderPolicy& policy, const AttackEnv& env,
                                 const std::vector<Sample>& corpus, const std::string& source_tag,
                                 const std::string& target_tag, EvalOptions options) {
  options.tag = source_tag + "->" + target_tag;
  options.config_echo["transfer"] = {{"source", source_tag}, {"target", target_tag}};
  TransferReport out;
  out.agent = run_attack(env, corpus, AttackMethod::kAgent, &policy, options);
  options.tag = target_tag;
  out.random = run_attack(env, corpus, AttackMethod::kRandomControl, nullptr, options);
  return out;
}

std::vector<Sample> adversarial_samples(const AttackReport& report, const std::vector<Sample>& corpus) {
  std::unordered_map<std::string, const Sample*> by_id;
  for (const auto& s : corpus) by_id.emplace(s.id, &s);
  std::vector<Sample> out;
  for (const auto& r : report.results) {
    if (!r.success) continue;
    const auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) throw ConfigError("report sample " + r.sample_id + " is not in the corpus");
    Sample s = *it->second;
    s.id += "#adv";
    s.fields[s.attack_field] = r.adversary.text();
    out.push_back(std::move(s));
  }
  return out;
}

AdversarialTrainingResult adversarial_training(const LinearVictim& original, const std::vector<Sample>& train,
                                               const std::vector<Sample>& adversaries,
                                               const std::vector<Sample>& validation,
                                               const std::function<AttackReport(const VictimModel&)>& attack) {
  std::vector<Sample> augmented = train;
  augmented.insert(augmented.end(), adversaries.begin(), adversaries.end());
  LinearVictim refit = fit_reference_victim(augmented, original.labels(), original.task(), original.config(),
                                            validation.empty() ? nullptr : &validation);
  AdversarialTrainingResult out{std::move(refit), {}, {}, 0.0, 0.0, adversaries.size()};
  out.accuracy_before = validation.empty() ? 0.0 : accuracy(original, validation);
  out.accuracy_after = validation.empty() ? 0.0 : accuracy(out.victim, validation);
  out.before = attack(original);
  out.after = attack(out.victim);
  return out;
}

}  // namespace seqattack
