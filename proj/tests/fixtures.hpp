#pragma once

// Shared builders for the unit tests and the acceptance suite.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "seqattack/env.hpp"
#include "seqattack/lexicon.hpp"
#include "seqattack/scorers.hpp"
#include "seqattack/synth.hpp"
#include "seqattack/text.hpp"
#include "seqattack/victim.hpp"

namespace fixtures {

using namespace seqattack;

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("seqattack-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Binary sentiment victim with one-dimensional word embeddings: the
/// positive-minus-negative logit is 2 * mean(score), OOV words count as 0.
inline LinearVictim score_victim(const std::vector<std::pair<std::string, double>>& scores) {
  LinearVictim::Params p;
  p.embeddings = Eigen::MatrixXd(scores.size(), 1);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p.vocab.push_back(scores[i].first);
    p.embeddings(static_cast<Eigen::Index>(i), 0) = scores[i].second;
  }
  p.weights = Eigen::MatrixXd(2, 1);
  p.weights << -1.0, 1.0;
  p.bias = Eigen::VectorXd::Zero(2);
  VictimConfig c;
  c.dim = 1;
  return LinearVictim(LabelSpace({"negative", "positive"}), TaskKind::kClassification, std::move(p), c);
}

inline Sample sample(std::string id, std::string text, std::size_t gold) {
  Sample s;
  s.id = std::move(id);
  s.fields = {std::move(text)};
  s.gold = gold;
  return s;
}

/// Every scorer and table an AttackEnv borrows, with a victim of choice.
struct World {
  EmbeddingIndex embeddings;
  ProtectedWordPolicy protection;
  RuleBasedTagger tagger;
  std::unique_ptr<TrigramLm> lm;
  std::unique_ptr<EmbeddingSimilarity> similarity;
  std::unique_ptr<VictimModel> victim;
  Diagnostics diagnostics;
  AttackConfig config;
  std::vector<Sample> train, valid, attack;

  AttackEnv env() const { return env_for(*victim); }
  AttackEnv env_for(const VictimModel& v) const {
    return AttackEnv({v, embeddings, protection, tagger, *lm, *similarity, const_cast<Diagnostics*>(&diagnostics)},
                     config);
  }
  const LinearVictim& linear() const { return dynamic_cast<const LinearVictim&>(*victim); }

  void fit_lm(const std::vector<Sample>& corpus) {
    std::vector<std::vector<std::string>> sents;
    for (const auto& s : corpus) sents.push_back(tokenize_words(s.fields[s.attack_field]).lowered());
    lm = std::make_unique<TrigramLm>(TrigramLm::fit(sents));
    similarity = std::make_unique<EmbeddingSimilarity>(embeddings, protection);
  }
};

/// The synthetic sentiment world with a fitted reference victim. Pinned seeds.
inline std::unique_ptr<World> synth_world(SynthDomain domain = SynthDomain::kMovies, SynthConfig sc = {}) {
  auto w = std::make_unique<World>();
  auto lex = make_synth_lexicon(sc.seed, sc.dim);
  w->embeddings = std::move(lex.embeddings);
  for (const auto& [word, tag] : lex.pos) w->tagger.add_entry(word, {tag});
  auto corpus = make_synth_corpus(domain, sc);
  w->train = std::move(corpus.train);
  w->valid = std::move(corpus.valid);
  w->attack = std::move(corpus.attack);
  w->fit_lm(w->train);
  w->victim = std::make_unique<LinearVictim>(
      fit_reference_victim(w->train, corpus.labels, TaskKind::kClassification, VictimConfig{}, &w->valid));
  return w;
}

/// Words with hand-placed 2-d embeddings. "good"-like words sit near (1, 0.2),
/// "bad"-like near (-1, 0.2); neutral nouns near (0, 1).
inline std::unique_ptr<World> toy_world() {
  auto w = std::make_unique<World>();
  w->embeddings = EmbeddingIndex(2);
  const std::vector<std::pair<std::string, std::vector<double>>> vecs = {
      {"good", {1.0, 0.2}},   {"fine", {0.95, 0.3}},   {"nice", {0.9, 0.1}},   {"great", {1.0, 0.35}},
      {"bad", {-1.0, 0.2}},   {"poor", {-0.95, 0.3}},  {"awful", {-0.9, 0.1}}, {"film", {0.05, 1.0}},
      {"movie", {0.0, 0.95}}, {"picture", {0.1, 0.9}}, {"plot", {-0.05, 1.0}}, {"story", {0.0, 1.05}},
  };
  for (const auto& [word, v] : vecs) w->embeddings.add(word, v);
  for (auto a : {"good", "fine", "nice", "great", "bad", "poor", "awful"}) w->tagger.add_entry(a, {PosTag::kAdj});
  for (auto n : {"film", "movie", "picture", "plot", "story"}) w->tagger.add_entry(n, {PosTag::kNoun});
  w->victim = std::make_unique<LinearVictim>(score_victim({{"good", 1.0},
                                                            {"fine", 0.8},
                                                            {"nice", 0.9},
                                                            {"great", 1.2},
                                                            {"bad", -1.0},
                                                            {"poor", -0.7},
                                                            {"awful", -1.3},
                                                            {"film", 0.05},
                                                            {"movie", -0.02},
                                                            {"picture", 0.01},
                                                            {"plot", -0.04},
                                                            {"story", 0.03}}));
  w->train = {sample("t0", "the film was good .", 1), sample("t1", "the plot was bad .", 0),
              sample("t2", "a nice story and a great movie .", 1), sample("t3", "an awful picture .", 0),
              sample("t4", "the story was poor but the film was fine .", 1)};
  w->fit_lm(w->train);
  return w;
}

/// 200 lowercase words in 40 clusters of five (8-d embeddings, one POS per
/// cluster), a linear victim with random word scores, and random sentences
/// labelled with the victim's own prediction.
inline std::unique_ptr<World> vocab200_world(std::uint64_t seed) {
  auto w = std::make_unique<World>();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t dim = 8;
  w->embeddings = EmbeddingIndex(dim);
  std::vector<std::string> words;
  std::vector<std::pair<std::string, double>> scores;
  const PosTag tags[] = {PosTag::kAdj, PosTag::kNoun, PosTag::kVerb};
  for (int c = 0; c < 40; ++c) {
    std::vector<double> centroid(dim);
    for (double& x : centroid) x = g(rng);
    for (int j = 0; j < 5; ++j) {
      const std::string word = "c" + std::to_string(c) + "w" + std::to_string(j);
      std::vector<double> v(dim);
      for (std::size_t k = 0; k < dim; ++k) v[k] = centroid[k] + 0.35 * g(rng);
      w->embeddings.add(word, v);
      w->tagger.add_entry(word, {tags[c % 3]});
      words.push_back(word);
      scores.emplace_back(word, u(rng));
    }
  }
  w->victim = std::make_unique<LinearVictim>(score_victim(scores));
  const std::vector<std::string> stop = {"the", "a", "and", "was", "of", "it"};
  auto sentence = [&] {
    const std::size_t n = 8 + rng() % 7;
    std::string text;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) text += ' ';
      text += rng() % 10 < 3 ? stop[rng() % stop.size()] : words[rng() % words.size()];
    }
    return text;
  };
  for (int i = 0; i < 300; ++i) {
    const auto text = sentence();
    const auto p = w->victim->predict({text});
    w->train.push_back(sample("v" + std::to_string(i), text, p[1] > p[0] ? 1 : 0));
  }
  for (int i = 0; i < 300; ++i) {
    const auto text = sentence();
    const auto p = w->victim->predict({text});
    w->attack.push_back(sample("a" + std::to_string(i), text, p[1] > p[0] ? 1 : 0));
  }
  w->fit_lm(w->train);
  return w;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace fixtures
