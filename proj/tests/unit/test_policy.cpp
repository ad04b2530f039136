#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "seqattack/errors.hpp"
#include "seqattack/policy.hpp"
#include "seqattack/trainer.hpp"

using namespace seqattack;
using fixtures::sample;

namespace {

// An alignment with one token per word over m single-letter words.
TokenAlignment identity_alignment(std::size_t m) {
  std::string text;
  std::unordered_set<std::string> vocab;
  for (std::size_t i = 0; i < m; ++i) {
    const std::string w = "w" + std::to_string(i);
    vocab.insert(w);
    text += (i ? " " : "") + w;
  }
  return align_tokens(tokenize_words(text), WordPieceTokenizer(vocab));
}

WordFinderPolicy toy_policy(const fixtures::World& w, std::uint64_t seed, bool fine_tune = false) {
  std::vector<std::vector<std::string>> sents;
  for (const auto& s : w.train) sents.push_back(tokenize_words(s.fields[0]).lowered());
  return WordFinderPolicy::initial(w.embeddings, WordPieceTokenizer::from_corpus(sents, 1), seed, fine_tune);
}

void randomize_head(WordFinderPolicy& p, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::VectorXd theta = p.parameters();
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] = theta[k] + g(rng);
  p.set_parameters(theta);
}

}  // namespace

TEST_CASE("masked softmax on fuzzed logits") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t m = 1 + rng() % 12;
    const double scale = std::pow(10.0, static_cast<double>(rng() % 5) - 2.0);
    Eigen::VectorXd logits(m);
    for (std::size_t i = 0; i < m; ++i) logits[i] = scale * g(rng);
    std::vector<std::uint8_t> mask(m);
    for (auto& b : mask) b = rng() % 3 != 0;
    mask[rng() % m] = 1;
    const auto d = masked_softmax(logits, mask);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!mask[i]) {
        REQUIRE(d.probs[i] == 0.0);
        REQUIRE(std::isinf(d.log_probs[i]));
      }
      total += d.probs[i];
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-12);

    const double shift = 50.0 * g(rng);
    const auto shifted = masked_softmax((logits.array() + shift).matrix(), mask);
    for (std::size_t i = 0; i < m; ++i) REQUIRE(std::abs(shifted.probs[i] - d.probs[i]) <= 1e-9);

    const auto al = identity_alignment(m);
    const double c = std::exp(4.0 * g(rng));
    const auto scaled = masked_softmax(c * logits, mask);
    std::mt19937_64 unused(0);
    REQUIRE(select_word(scaled, SelectMode::kArgmax, al, unused).token ==
            select_word(d, SelectMode::kArgmax, al, unused).token);
  }
  CHECK_THROWS_AS(masked_softmax(Eigen::VectorXd::Zero(3), {0, 0, 0}), NoLegalAction);
}

TEST_CASE("argmax selection") {
  const Eigen::Vector3d p(0.1, 0.7, 0.2);
  const auto d = masked_softmax(p.array().log().matrix(), {1, 1, 1});
  std::mt19937_64 rng(1);
  const auto c = select_word(d, SelectMode::kArgmax, identity_alignment(3), rng);
  CHECK(c.token == 1);
  CHECK(c.word == 1);
  CHECK(c.log_prob == doctest::Approx(std::log(0.7)).epsilon(1e-12));
  // Ties go to the lowest index.
  const auto tie = masked_softmax(Eigen::Vector3d(1, 2, 2), {1, 1, 1});
  CHECK(select_word(tie, SelectMode::kArgmax, identity_alignment(3), rng).token == 1);
}

TEST_CASE("sampling is reproducible and matches the distribution") {
  const Eigen::VectorXd logits = (Eigen::VectorXd(5) << 0.3, -1.0, 1.2, 0.0, 0.5).finished();
  const auto d = masked_softmax(logits, {1, 1, 1, 0, 1});
  const auto al = identity_alignment(5);
  std::mt19937_64 a(7), b(7);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(select_word(d, SelectMode::kSample, al, a).token == select_word(d, SelectMode::kSample, al, b).token);
  }
  const int n = 10000;
  std::vector<int> counts(5, 0);
  std::mt19937_64 rng(2024);
  for (int i = 0; i < n; ++i) ++counts[select_word(d, SelectMode::kSample, al, rng).token];
  CHECK(counts[3] == 0);
  for (int i = 0; i < 5; ++i) {
    const double expected = n * d.probs[i];
    const double sigma = std::sqrt(n * d.probs[i] * (1.0 - d.probs[i]));
    CHECK(std::abs(counts[i] - expected) <= 3.0 * sigma + 1e-9);
  }
}

TEST_CASE("a zero head is uniform over editable tokens") {
  auto w = fixtures::toy_world();
  const auto env = w->env();
  const auto policy = toy_policy(*w, 3);
  const auto s = env.reset(sample("a", "the film was good and the plot was unbelievably nice .", 1));
  const auto al = policy.align(s.current);
  REQUIRE(al.token_count() > s.size());  // "unbelievably" splits
  const auto d = policy.token_distribution(s, al);
  std::size_t legal = 0;
  for (std::size_t t = 0; t < al.token_count(); ++t) legal += !s.in_modified_set(al.word_of_token()[t]);
  for (std::size_t t = 0; t < al.token_count(); ++t) {
    const bool in_w = s.in_modified_set(al.word_of_token()[t]);
    CHECK(d.probs[t] == doctest::Approx(in_w ? 0.0 : 1.0 / static_cast<double>(legal)).epsilon(1e-14));
  }
}

TEST_CASE("with one editable word left its tokens carry all the mass") {
  auto w = fixtures::toy_world();
  const auto env = w->env();
  auto policy = toy_policy(*w, 3);
  std::mt19937_64 rng(4);
  randomize_head(policy, rng);
  AttackState s = env.reset(sample("a", "the film was unbelievably good and the plot was nice", 1));
  std::size_t keep = 3;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != keep) s.modified[i] = 1;
  }
  const auto al = policy.align(s.current);
  const auto d = policy.token_distribution(s, al);
  double mass = 0.0;
  for (std::size_t t = 0; t < al.token_count(); ++t) {
    if (al.word_of_token()[t] == keep) mass += d.probs[t];
    else CHECK(d.probs[t] == 0.0);
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("the distribution is an exact softmax of the logged representation") {
  auto w = fixtures::synth_world();
  const auto env = w->env();
  std::vector<std::vector<std::string>> sents;
  for (const auto& s : w->train) sents.push_back(tokenize_words(s.fields[0]).lowered());
  auto policy = WordFinderPolicy::initial(w->embeddings, WordPieceTokenizer::from_corpus(sents, 2), 5);
  std::mt19937_64 rng(8);
  randomize_head(policy, rng, 0.5);
  const Eigen::VectorXd theta = policy.parameters();
  const Eigen::Index f = theta.size() - 1;
  const std::size_t d_enc = policy.encoder().dim();
  for (std::size_t k = 0; k < 50; ++k) {
    AttackState s;
    try {
      s = env.reset(w->attack[k]);
    } catch (const SkippedSample&) {
      continue;
    }
    const auto al = policy.align(s.current);
    DecisionRecord rec;
    const auto d = policy.token_distribution(s, al, &rec);
    REQUIRE(rec.features.rows() == static_cast<Eigen::Index>(al.token_count()));
    REQUIRE(rec.features.cols() == f);
    // e_i = [h_i; b_i] with b_i all ones for editable words and all zeros in W.
    const Eigen::MatrixXd h = policy.encoder().encode(s.current, al);
    for (std::size_t t = 0; t < al.token_count(); ++t) {
      const double bit = s.in_modified_set(al.word_of_token()[t]) ? 0.0 : 1.0;
      for (std::size_t c = 0; c < d_enc; ++c) {
        REQUIRE(rec.features(t, c) == h(t, c));
        REQUIRE(rec.features(t, d_enc + c) == bit);
      }
    }
    for (std::size_t t = 0; t < al.token_count(); ++t) {
      if (!rec.mask[t]) continue;
      rec.chosen = t;
      const double lp = oracles::head_log_prob(rec, theta.head(f), theta[f]);
      REQUIRE(std::abs(std::exp(lp) - d.probs[t]) <= 1e-12);
    }
  }
}

TEST_CASE("neighbour mean and the context layer") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  const Eigen::MatrixXd n = neighbour_mean(x);
  CHECK(n(0, 0) == 1.5);  // (0 + 3) / 2
  CHECK(n(1, 1) == 4.0);  // (2 + 6) / 2
  CHECK(n(2, 0) == 1.5);
  ContextLayer l{Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)};
  const Eigen::MatrixXd h = context_forward(l, x);
  CHECK(h(2, 1) == doctest::Approx(std::tanh(6.0)));
}

TEST_CASE("policy gradients match finite differences") {
  auto w = fixtures::toy_world();
  const auto env = w->env();
  for (bool fine_tune : {false, true}) {
    CAPTURE(fine_tune);
    auto policy = toy_policy(*w, 11, fine_tune);
    std::mt19937_64 rng(12);
    randomize_head(policy, rng, 0.3);
    const auto s = env.reset(sample("a", "the film was good and the plot was unbelievably nice", 1));
    const auto al = policy.align(s.current);
    DecisionRecord rec;
    const auto d = policy.token_distribution(s, al, &rec);
    rec.chosen = select_word(d, SelectMode::kSample, al, rng).token;
    const Eigen::VectorXd theta = policy.parameters();
    const Eigen::VectorXd analytic = policy.grad_log_prob(rec);
    auto copy = policy;
    const auto numeric = oracles::numeric_gradient(
        [&](const Eigen::VectorXd& t) {
          copy.set_parameters(t);
          return copy.log_prob(rec);
        },
        theta);
    CHECK((analytic - numeric).norm() / std::max(1.0, numeric.norm()) <= 1e-6);
    if (fine_tune) CHECK(theta.size() > static_cast<Eigen::Index>(2 * policy.encoder().dim() + 1));
  }
}

TEST_CASE("policy checkpoints round trip and reject mismatched embeddings") {
  auto w = fixtures::toy_world();
  auto policy = toy_policy(*w, 13);
  std::mt19937_64 rng(13);
  randomize_head(policy, rng);
  fixtures::TempDir dir("policy");
  policy.save(dir / "p.json", {{"note", "x"}});
  const auto back = WordFinderPolicy::load(dir / "p.json", w->embeddings);
  CHECK(back.parameters() == policy.parameters());
  CHECK(back.tokenizer().sorted_vocab() == policy.tokenizer().sorted_vocab());
  const auto env = w->env();
  const auto s = env.reset(sample("a", "the film was good and the plot was nice", 1));
  const auto da = policy.token_distribution(s, policy.align(s.current));
  const auto db = back.token_distribution(s, back.align(s.current));
  CHECK(da.probs == db.probs);
  EmbeddingIndex other(3);
  other.add("x", std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(WordFinderPolicy::load(dir / "p.json", other), ConfigError);
}

TEST_CASE("substitution picks the single candidate when there is one") {
  EmbeddingIndex e(2);
  e.add("good", std::vector<double>{1, 0});
  e.add("fine", std::vector<double>{1, 0.3});
  e.add("film", std::vector<double>{0, 1});
  auto w = fixtures::toy_world();
  w->embeddings = e;
  w->similarity = std::make_unique<EmbeddingSimilarity>(w->embeddings, w->protection);
  const auto env = w->env();
  auto s = env.reset(sample("a", "the film was good and the plot was nice", 1));
  const auto q = s.query_count;
  const auto p = propose_substitution(env, s, 3);
  CHECK(p.word == "fine");
  CHECK(p.evaluated.size() == 1);
  CHECK(s.query_count == q + 1);
  CHECK_THROWS_AS(propose_substitution(env, s, 1), EmptyCandidates);
}

TEST_CASE("substitution matches exhaustive enumeration") {
  for (auto objective : {SubstitutionObjective::kInstantReward, SubstitutionObjective::kAttackRewardOnly}) {
    auto w = fixtures::vocab200_world(31);
    w->config.objective = objective;
    const auto env = w->env();
    std::mt19937_64 rng(32);
    std::size_t compared = 0;
    for (std::size_t k = 0; compared < 40 && k < w->attack.size(); ++k) {
      AttackState s;
      try {
        s = env.reset(w->attack[k]);
      } catch (const SkippedSample&) {
        continue;
      }
      if (env.terminal_check(s)) continue;
      std::vector<std::size_t> open;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.in_modified_set(i) && !env.candidates(s, i).empty()) open.push_back(i);
      }
      if (open.empty()) continue;
      const std::size_t i = open[rng() % open.size()];
      const auto expected = oracles::best_substitution(*w, s, i);
      const auto before = s.query_count;
      const auto got = propose_substitution(env, s, i);
      REQUIRE(got.word == expected.word);
      REQUIRE(got.evaluated.size() == expected.candidates);
      REQUIRE(s.query_count == before + expected.candidates);
      REQUIRE(std::abs(got.reward.r_t - expected.r_t) <= 1e-12);
      ++compared;
    }
    CHECK(compared == 40);
  }
}

TEST_CASE("the chosen word is never in W") {
  auto w = fixtures::synth_world();
  const auto env = w->env();
  std::vector<std::vector<std::string>> sents;
  for (const auto& s : w->train) sents.push_back(tokenize_words(s.fields[0]).lowered());
  auto policy = WordFinderPolicy::initial(w->embeddings, WordPieceTokenizer::from_corpus(sents, 1), 5);
  std::mt19937_64 rng(41);
  randomize_head(policy, rng, 2.0);
  PolicyFinder finder(policy, SelectMode::kSample);
  std::size_t decisions = 0;
  for (std::size_t k = 0; k < 120; ++k) {
    AttackState s;
    try {
      s = env.reset(w->attack[k]);
    } catch (const SkippedSample&) {
      continue;
    }
    finder.begin(env, s);
    auto term = env.terminal_check(s);
    while (!term) {
      const auto choice = finder.choose(s, rng);
      REQUIRE_FALSE(s.in_modified_set(choice.word));
      REQUIRE_FALSE(is_protected(w->protection, s.current[choice.word]));
      REQUIRE(choice.log_prob <= 0.0);
      ++decisions;
      StepOutcome out;
      try {
        const auto p = propose_substitution(env, s, choice.word);
        out = env.step(s, {choice.word, p.word, choice.log_prob});
        finder.edited(choice.word, p.word);
      } catch (const EmptyCandidates&) {
        out = env.skip(s, choice.word);
      }
      s = out.state;
      term = out.terminal;
    }
  }
  CHECK(decisions > 200);
}
