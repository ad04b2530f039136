#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "fixtures.hpp"
#include "seqattack/errors.hpp"
#include "seqattack/eval.hpp"

using namespace seqattack;
using fixtures::sample;

namespace {

std::vector<Substitution> diff_trace(const WordSequence& a, const WordSequence& b) {
  std::vector<Substitution> t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) t.push_back({i, a[i], b[i]});
  }
  return t;
}

WordFinderPolicy synth_policy(const fixtures::World& w, std::uint64_t seed) {
  std::vector<std::vector<std::string>> sents;
  for (const auto& s : w.train) sents.push_back(tokenize_words(s.fields[0]).lowered());
  return WordFinderPolicy::initial(w.embeddings, WordPieceTokenizer::from_corpus(sents, 1), seed);
}

std::string results_dump(const AttackReport& r) {
  std::string out;
  for (const auto& x : r.results) out += to_json(x).dump() + "\n";
  return out;
}

}  // namespace

TEST_CASE("constraint re-check") {
  auto w = fixtures::toy_world();
  // Close to "good" in embedding space but tagged as a noun.
  w->embeddings.add("goodness", std::vector<double>{1.0, 0.22});
  w->tagger.add_entry("goodness", {PosTag::kNoun});
  auto check = [&](const std::string& a, const std::string& b) {
    const auto x = tokenize_words(a), y = tokenize_words(b);
    return enforce_constraints(x, y, diff_trace(x, y), w->embeddings, w->protection, w->tagger);
  };
  SUBCASE("identical texts pass") {
    const auto c = check("the film was good", "the film was good");
    CHECK(c.pass);
    CHECK(c.modification_rate == 0.0);
  }
  SUBCASE("a single close substitution passes") {
    CHECK(check("the film was good and the plot was bad", "the film was fine and the plot was bad").pass);
  }
  SUBCASE("half the words changed") {
    const auto c = check("good film good film good film good film good film",
                         "fine movie fine movie fine film good film good film");
    CHECK(c.modification_rate == 0.5);
    CHECK(c.reasons == std::vector<std::string>{kMaxModification});
  }
  SUBCASE("a distant substitution") {
    const auto c = check("the film was good and the plot was bad", "the film was good and the plot was great");
    CHECK(c.reasons == std::vector<std::string>{kEmbeddingDistance});
  }
  SUBCASE("an out-of-vocabulary replacement counts as distant") {
    const auto c = check("the film was good and the plot was bad", "the film was good and the plot was zzz");
    CHECK(std::find(c.reasons.begin(), c.reasons.end(), kEmbeddingDistance) != c.reasons.end());
  }
  SUBCASE("a stop word altered") {
    const auto c = check("the film was good and the plot was bad", "a film was good and the plot was bad");
    CHECK(c.reasons.front() == kStopWordAltered);
  }
  SUBCASE("a tag change") {
    const auto c = check("the film was good and the plot was bad", "the film was goodness and the plot was bad");
    CHECK(c.reasons == std::vector<std::string>{kPosMismatch});
  }
  SUBCASE("a trace that does not reproduce the adversary") {
    const auto x = tokenize_words("the film was good and the plot was bad");
    const auto y = tokenize_words("the film was fine and the plot was bad");
    auto c = enforce_constraints(x, y, {}, w->embeddings, w->protection, w->tagger);
    CHECK(c.reasons == std::vector<std::string>{kTraceMismatch});
    c = enforce_constraints(x, y, {{3, "bad", "fine"}}, w->embeddings, w->protection, w->tagger);
    CHECK(c.reasons == std::vector<std::string>{kTraceMismatch});
  }
}

TEST_CASE("corpus attack edge cases") {
  auto w = fixtures::toy_world();
  const auto env = w->env();
  SUBCASE("nothing eligible") {
    std::vector<Sample> wrong = w->train;
    for (auto& s : wrong) s.gold = 1 - s.gold;
    const auto r = greedy_baseline_attack(env, wrong);
    CHECK(r.n_eligible == 0);
    CHECK(r.n_skipped == wrong.size());
    CHECK(r.a_rate == 0.0);
  }
  SUBCASE("one substitution flips") {
    // "movie" is the only editable word; every neutral neighbour but "plot"
    // scores positive.
    const auto r = greedy_baseline_attack(env, {sample("s", "it was all of the movie", 0)});
    REQUIRE(r.n_eligible == 1);
    CHECK(r.a_rate == 1.0);
    CHECK(r.mean_steps == 1.0);
    CHECK(r.results[0].trace.size() == 1);
    CHECK(r.results[0].violations.empty());
    // reset + deletion of "movie" + the step + four candidates
    CHECK(r.results[0].query_count == 7);
  }
}

TEST_CASE("aggregates are recomputed from per-sample rows") {
  AttackReport rep;
  auto row = [](bool skipped, bool flipped, bool success, double mod, double sim, std::size_t q, std::size_t steps) {
    AttackResult r;
    r.skipped = skipped;
    r.flipped = flipped;
    r.success = success;
    r.modification_rate = mod;
    r.similarity = sim;
    r.query_count = q;
    r.steps = steps;
    return r;
  };
  rep.results = {row(true, false, false, 0, 1, 1, 0), row(false, true, true, 0.1, 0.9, 10, 1),
                 row(false, true, true, 0.3, 0.7, 20, 3), row(false, true, false, 0.5, 0.2, 30, 2),
                 row(false, false, false, 0.2, 0.8, 40, 2)};
  aggregate(rep);
  CHECK(rep.n_total == 5);
  CHECK(rep.n_skipped == 1);
  CHECK(rep.n_eligible == 4);
  CHECK(rep.n_success == 2);
  CHECK(rep.n_rejected == 1);
  CHECK(rep.a_rate == 0.5);
  CHECK(rep.mean_mod == doctest::Approx(0.2));
  CHECK(rep.mean_sim == doctest::Approx(0.8));
  CHECK(rep.mean_queries == 25.0);
  CHECK(rep.mean_queries_success == 15.0);
  CHECK(rep.mean_steps == 2.0);
}

TEST_CASE("reports") {
  auto w = fixtures::synth_world();
  const auto env = w->env();
  EvalOptions opt;
  opt.tag = "movies";
  opt.limit = 40;
  const auto rep = run_attack(env, w->attack, AttackMethod::kRandomFinder, nullptr, opt);
  REQUIRE(rep.n_eligible == 40);

  SUBCASE("every adversary passes the re-check on its own") {
    for (const auto& r : rep.results) {
      if (r.skipped) continue;
      const auto c = enforce_constraints(r.original, r.adversary, r.trace, w->embeddings, w->protection, w->tagger);
      CHECK(c.reasons == r.violations);
      CHECK(r.success == (r.flipped && c.pass));
    }
  }
  SUBCASE("disk round trip") {
    fixtures::TempDir dir("report");
    write_report(rep, dir.path());
    const auto back = read_report(dir.path());
    CHECK(report_json(back) == report_json(rep));
    CHECK(results_dump(back) == results_dump(rep));
    CHECK(fixtures::read_file(dir / "summary.txt") == summary_table({rep}));
  }
  SUBCASE("summary table numbers match the aggregates") {
    std::istringstream in(summary_table({rep}));
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    char method[64], tag[64];
    double a, mod, sim, q;
    std::size_t n;
    REQUIRE(std::sscanf(line.c_str(), "%63s %63s %lf %lf %lf %lf %zu", method, tag, &a, &mod, &sim, &q, &n) == 7);
    CHECK(std::string(method) == "random-finder");
    CHECK(std::string(tag) == "movies");
    CHECK(std::abs(a - 100.0 * rep.a_rate) <= 0.005);
    CHECK(std::abs(mod - 100.0 * rep.mean_mod) <= 0.005);
    CHECK(std::abs(sim - rep.mean_sim) <= 0.00005);
    CHECK(std::abs(q - rep.mean_queries) <= 0.005);
    CHECK(n == rep.n_eligible);
  }
  SUBCASE("the greedy baseline has the same report schema") {
    const auto g = greedy_baseline_attack(env, w->attack, opt);
    const auto a = report_json(rep), b = report_json(g);
    REQUIRE(a.size() == b.size());
    for (auto it = a.begin(); it != a.end(); ++it) {
      REQUIRE(b.contains(it.key()));
      CHECK(b[it.key()].type() == it.value().type());
    }
  }
}

TEST_CASE("deletion importance matches recomputed gold-probability drops") {
  auto w = fixtures::toy_world();
  const auto env = w->env();
  for (const auto& s : w->train) {
    auto state = env.reset(s);
    const std::size_t before = state.query_count;
    const auto imp = deletion_importance(env, state);
    std::size_t editable = 0;
    std::size_t best = state.size();
    double best_imp = -INFINITY;
    for (std::size_t i = 0; i < state.size(); ++i) {
      if (state.in_modified_set(i)) {
        CHECK(imp[i] == 0.0);
        continue;
      }
      ++editable;
      std::string text;
      for (std::size_t j = 0; j < state.size(); ++j) {
        if (j == i) continue;
        if (!text.empty()) text += ' ';
        text += state.current[j];
      }
      const double expect = state.gold_prob - w->victim->predict({text})[s.gold];
      CHECK(imp[i] == doctest::Approx(expect).epsilon(1e-12));
      if (expect > best_imp) {
        best_imp = expect;
        best = i;
      }
    }
    CHECK(state.query_count - before == editable);
    ImportanceFinder f;
    auto fresh = env.reset(s);
    f.begin(env, fresh);
    std::mt19937_64 rng(0);
    CHECK(f.choose(fresh, rng).word == best);
  }
}

TEST_CASE("transfer and adversarial training plumbing") {
  auto w = fixtures::synth_world();
  const auto env = w->env();
  const auto policy = synth_policy(*w, 2);
  EvalOptions opt;
  opt.limit = 30;
  SUBCASE("transfer onto the same world is a plain corpus attack") {
    const auto t = evaluate_transfer(policy, env, w->attack, "movies", "movies", opt);
    const auto direct = attack_corpus(policy, env, w->attack, opt);
    CHECK(results_dump(t.agent) == results_dump(direct));
    CHECK(t.agent.tag == "movies->movies");
    CHECK(t.random.method == "random-control");
  }
  SUBCASE("no adversaries leaves accuracy unchanged") {
    auto r = adversarial_training(w->linear(), w->train, {}, w->valid,
                                  [&](const VictimModel& v) { return attack_corpus(policy, w->env_for(v), w->attack, opt); });
    CHECK(r.adversaries == 0);
    CHECK(r.accuracy_after == r.accuracy_before);
    CHECK(results_dump(r.before) == results_dump(r.after));
  }
  SUBCASE("adversarial samples keep the gold label") {
    const auto rep = greedy_baseline_attack(env, w->attack, opt);
    const auto adv = adversarial_samples(rep, w->attack);
    CHECK(adv.size() == rep.n_success);
    for (const auto& a : adv) {
      const auto id = a.id.substr(0, a.id.size() - 4);
      const auto it = std::find_if(w->attack.begin(), w->attack.end(), [&](const Sample& s) { return s.id == id; });
      REQUIRE(it != w->attack.end());
      CHECK(a.gold == it->gold);
      CHECK(argmax(w->victim->predict(a.fields)) != a.gold);
    }
  }
}

TEST_CASE("parallel attacks reproduce the sequential run") {
  auto w = fixtures::synth_world();
  const auto env = w->env();
  const auto policy = synth_policy(*w, 2);
  EvalOptions one, four;
  four.jobs = 4;
  for (auto m : {AttackMethod::kAgent, AttackMethod::kRandomFinder, AttackMethod::kRandomControl}) {
    const auto a = run_attack(env, w->attack, m, &policy, one);
    const auto b = run_attack(env, w->attack, m, &policy, four);
    CHECK(results_dump(a) == results_dump(b));
    CHECK(report_json(a) == report_json(b));
  }
}

TEST_CASE("agent attack without a policy") {
  auto w = fixtures::toy_world();
  CHECK_THROWS_AS(run_attack(w->env(), w->train, AttackMethod::kAgent, nullptr, {}), ConfigError);
}
