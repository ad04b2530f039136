#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqattack/lexicon.hpp"
#include "seqattack/text.hpp"

namespace seqattack {

/// Per-token cross-entropy (nats) of a sentence under a left-to-right LM.
class FluencyScorer {
 public:
  virtual ~FluencyScorer() = default;
  virtual std::vector<double> token_losses(const std::vector<std::string>& words) const = 0;
  virtual std::string id() const = 0;
};

/// Mean token loss over the sentence's own length.
double mean_token_loss(const FluencyScorer& scorer, const WordSequence& sentence);

/// Mean cross-entropy of `curr` minus that of `prev`. Positive means the
/// edit made the sentence less fluent.
double fluency_reward(const FluencyScorer& scorer, const WordSequence& prev, const WordSequence& curr);

/// Word trigram LM with interpolated absolute discounting. Words are
/// lowercased; unseen words map to <unk>.
///
/// P(w | u v) = max(c(uvw) - D, 0) / c(uv.) + D * N1+(uv.) / c(uv.) * P(w | v)
///
/// with the same recursion down to a unigram that interpolates with the
/// uniform distribution over the vocabulary (training words, </s>, <unk>).
class TrigramLm final : public FluencyScorer {
 public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kEos = "</s>";
  static constexpr std::string_view kUnk = "<unk>";

  static TrigramLm fit(const std::vector<std::vector<std::string>>& sentences, double discount = 0.75);

  double discount() const { return discount_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  /// Predictable tokens: training words, </s> and <unk>.
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  /// P(w | u v). Context words may be "<s>".
  double prob(std::string_view w, std::string_view u, std::string_view v) const;

  std::vector<double> token_losses(const std::vector<std::string>& words) const override;
  std::string id() const override { return "trigram-absdiscount-v1"; }

  void save(const std::filesystem::path& path) const;
  static TrigramLm load(const std::filesystem::path& path);

 private:
  TrigramLm() = default;
  std::uint32_t id_of(std::string_view w) const;
  std::uint32_t intern(const std::string& w);
  void finalize();
  double p1(std::uint32_t w) const;
  double p2(std::uint32_t w, std::uint32_t v) const;
  double p3(std::uint32_t w, std::uint32_t u, std::uint32_t v) const;

  static std::uint64_t key(std::uint64_t a, std::uint64_t b) { return (a << 21) | b; }
  static std::uint64_t key(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return (a << 42) | (b << 21) | c; }

  double discount_ = 0.75;
  std::vector<std::string> vocab_;  // ids; <s> lives past the end
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::uint32_t bos_ = 0, eos_ = 0, unk_ = 0;

  std::vector<double> uni_;  // by id
  double uni_total_ = 0.0;
  double uni_types_ = 0.0;
  std::unordered_map<std::uint64_t, double> bi_, tri_;
  // context -> (total count, distinct followers)
  std::unordered_map<std::uint64_t, std::pair<double, double>> bi_ctx_, tri_ctx_;
};

/// Sim(a, b) in [-1, 1]; Sim(a, a) = 1 and symmetric.
class SimilarityScorer {
 public:
  virtual ~SimilarityScorer() = default;
  virtual double similarity(const WordSequence& a, const WordSequence& b) const = 0;
  virtual std::string id() const = 0;
};

/// Cosine between the mean embeddings of the non-protected, in-vocabulary
/// words of each text. When either pool is empty the score is 1 for equal
/// word lists and 0 otherwise. Holds references; both must outlive it.
class EmbeddingSimilarity final : public SimilarityScorer {
 public:
  EmbeddingSimilarity(const EmbeddingIndex& index, const ProtectedWordPolicy& policy)
      : index_(index), policy_(policy) {}

  double similarity(const WordSequence& a, const WordSequence& b) const override;
  std::string id() const override { return "embedding-mean-cosine-v1"; }

  std::vector<double> pooled(const WordSequence& s) const;

 private:
  const EmbeddingIndex& index_;
  const ProtectedWordPolicy& policy_;
};

/// Sim(original, prev) - Sim(original, curr): positive when the edit moved
/// the text away from the original.
double similarity_reward(const SimilarityScorer& scorer, const WordSequence& original,
                         const WordSequence& prev, const WordSequence& curr);

}  // namespace seqattack
