#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seqattack/lexicon.hpp"
#include "seqattack/victim.hpp"

namespace seqattack {

/// Generator for a small, self-contained sentiment world: counter-fitted
/// style embeddings where synonym clusters are tight and antonyms far apart,
/// a POS lexicon, and labelled review corpora in two domains that share the
/// evaluative vocabulary but not the topical nouns.
///
/// Each evaluative cluster has two "core" members used in the main
/// sentiment slots, one "drift" member that only ever shows up in
/// concessive clauses of opposite-label reviews (so a fitted victim learns
/// it with the wrong polarity), and members the victim never sees.
struct SynthConfig {
  std::uint64_t seed = 2024;
  std::size_t dim = 64;
  std::size_t train = 500;
  std::size_t valid = 200;
  std::size_t attack = 200;
  double two_slot_rate = 0.3;
  double concession_rate = 0.25;
};

enum class SynthDomain { kMovies, kProducts };

std::string_view to_string(SynthDomain d);
SynthDomain parse_synth_domain(std::string_view name);

struct SynthCluster {
  std::vector<std::string> words;
  PosTag pos = PosTag::kNoun;
  int polarity = 0;  // +1 positive, -1 negative, 0 neutral
};

/// Every cluster of the world, evaluative ones first.
const std::vector<SynthCluster>& synth_clusters();

struct SynthLexicon {
  EmbeddingIndex embeddings;
  std::vector<std::pair<std::string, PosTag>> pos;
};

/// Embeddings for all cluster words plus the template and stop words.
/// Deterministic in (seed, dim).
SynthLexicon make_synth_lexicon(std::uint64_t seed, std::size_t dim);

struct SynthCorpus {
  LabelSpace labels;
  std::vector<Sample> train, valid, attack;
};

SynthCorpus make_synth_corpus(SynthDomain domain, const SynthConfig& config);

/// Writes embeddings.txt, pos_lexicon.tsv and, per domain, <domain>/train.tsv,
/// valid.tsv, attack.tsv under `dir`.
void write_synth_world(const std::filesystem::path& dir, const SynthConfig& config);

/// "word<TAB>TAG" lines understood by RuleBasedTagger::load_lexicon.
void save_pos_lexicon(const std::vector<std::pair<std::string, PosTag>>& entries, const std::filesystem::path& path);

}  // namespace seqattack
