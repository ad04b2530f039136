#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "seqattack/text.hpp"

namespace seqattack {

/// Dense word vectors of a fixed dimension. Read-only once built.
class EmbeddingIndex {
 public:
  explicit EmbeddingIndex(std::size_t dim = 0) : dim_(dim) {}

  /// Returns false (and keeps the existing vector) when `word` is already
  /// present. Throws std::invalid_argument on a dimension mismatch or a
  /// non-finite entry.
  bool add(std::string word, std::span<const double> vec);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  std::size_t duplicates_skipped() const { return duplicates_; }

  std::optional<std::size_t> index_of(std::string_view word) const;
  bool contains(std::string_view word) const { return index_of(word).has_value(); }
  const std::string& word(std::size_t i) const { return words_[i]; }
  std::span<const double> vector(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  double norm(std::size_t i) const { return norms_[i]; }

  /// A miss is std::nullopt, never a zero vector.
  std::optional<std::span<const double>> lookup(std::string_view word) const;

  double cosine(std::size_t a, std::size_t b) const;
  std::optional<double> cosine(std::string_view a, std::string_view b) const;

 private:
  std::size_t dim_;
  std::vector<std::string> words_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t duplicates_ = 0;
};

/// Reads `word v_1 ... v_d` lines; d comes from the first line. Ragged rows
/// and unparsable numbers raise FormatError with the 1-based line number.
/// Duplicate words keep their first vector and are counted.
EmbeddingIndex load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingIndex& index, const std::filesystem::path& path);

struct SynonymCandidate {
  std::string word;
  double score = 0.0;
};

struct SynonymSet {
  std::string source;
  std::vector<SynonymCandidate> candidates;  // descending score, ties by word
  bool oov = false;
};

/// Exact top-k cosine neighbours of `word` with score >= threshold.
SynonymSet synonyms(const EmbeddingIndex& index, std::string_view word, std::size_t k,
                    double threshold);

// ---------------------------------------------------------------------------

class ProtectedWordPolicy {
 public:
  /// The NLTK English stop-word list.
  ProtectedWordPolicy();
  explicit ProtectedWordPolicy(std::unordered_set<std::string> stopwords);

  static ProtectedWordPolicy from_file(const std::filesystem::path& path);

  bool is_stopword(std::string_view word) const;
  const std::unordered_set<std::string>& stopwords() const { return stopwords_; }

 private:
  std::unordered_set<std::string> stopwords_;
};

/// Stop words (case-insensitive) and punctuation are never edited.
bool is_protected(const ProtectedWordPolicy& policy, std::string_view word);

// ---------------------------------------------------------------------------

enum class PosTag { kNoun, kVerb, kAdj, kAdv, kPron, kDet, kAdp, kConj, kNum, kPunct, kPart, kOther };

std::string_view to_string(PosTag tag);
std::optional<PosTag> parse_pos_tag(std::string_view name);

class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual std::vector<PosTag> tag(const std::vector<std::string>& words) const = 0;
  virtual std::string id() const = 0;
};

/// Lexicon lookup with a handful of left-context disambiguation rules and
/// suffix heuristics for unknown words.
class RuleBasedTagger final : public PosTagger {
 public:
  RuleBasedTagger();

  /// Tags are listed most-likely first.
  void add_entry(const std::string& word, std::vector<PosTag> tags);

  /// Lines of `word<TAB>TAG[,TAG...]`.
  void load_lexicon(const std::filesystem::path& path);

  std::vector<PosTag> tag(const std::vector<std::string>& words) const override;
  std::string id() const override { return "rule-based-v1"; }

 private:
  std::unordered_map<std::string, std::vector<PosTag>> lexicon_;
};

struct Diagnostics {
  std::atomic<std::size_t> tagger_failures{0};
};

/// True iff `candidate` placed at `position` receives the same tag that
/// `original` has there. A throwing tagger counts as incompatible.
bool pos_compatible(const PosTagger& tagger, std::string_view original, std::string_view candidate,
                    const WordSequence& sentence, std::size_t position,
                    Diagnostics* diagnostics = nullptr);

}  // namespace seqattack
