#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace seqattack {

/// ASCII lowercase; multi-byte UTF-8 sequences pass through unchanged.
std::string to_lower(std::string_view s);

/// True when every code point of `word` is punctuation or a symbol.
bool is_punctuation(std::string_view word);

/// A text split into editable words. The whitespace between words is kept
/// verbatim so `text()` reproduces the input byte for byte.
class WordSequence {
 public:
  WordSequence() = default;

  /// `gaps` must hold words.size() + 1 separators: leading, between each
  /// pair of words, trailing.
  WordSequence(std::vector<std::string> words, std::vector<std::string> gaps);

  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const std::string& operator[](std::size_t i) const { return words_[i]; }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& gaps() const { return gaps_; }

  /// Byte offset of word `i` in `text()`.
  std::size_t offset(std::size_t i) const { return offsets_[i]; }

  std::string text() const;
  std::vector<std::string> lowered() const;

  WordSequence with_word(std::size_t i, std::string replacement) const;
  WordSequence without_word(std::size_t i) const;
  WordSequence truncated(std::size_t max_words) const;

  friend bool operator==(const WordSequence& a, const WordSequence& b) {
    return a.words_ == b.words_ && a.gaps_ == b.gaps_;
  }

 private:
  void compute_offsets();

  std::vector<std::string> words_;
  std::vector<std::string> gaps_;
  std::vector<std::size_t> offsets_;
};

/// Splits on Unicode whitespace and detaches punctuation into standalone
/// words. Apostrophes and hyphens between word characters stay inside the
/// word ("can't", "well-made"), as do separators inside numbers ("3.5").
/// Throws EmptyInput for empty or whitespace-only text.
WordSequence tokenize_words(std::string_view text);

/// The agent encoder's sub-word tokenizer. Continuation pieces carry a "##"
/// prefix; stripping it and concatenating must spell the lowercased word.
class SubwordTokenizer {
 public:
  virtual ~SubwordTokenizer() = default;
  virtual std::vector<std::string> tokenize_word(std::string_view word) const = 0;
  virtual std::string id() const = 0;
};

/// Greedy longest-match-first WordPiece. Single code points are always
/// admissible, so every word tokenizes.
class WordPieceTokenizer final : public SubwordTokenizer {
 public:
  explicit WordPieceTokenizer(std::unordered_set<std::string> vocab);

  /// Whole words seen at least `min_count` times plus a fixed set of common
  /// English suffix pieces.
  static WordPieceTokenizer from_corpus(const std::vector<std::vector<std::string>>& sentences,
                                        std::size_t min_count);

  std::vector<std::string> tokenize_word(std::string_view word) const override;
  std::string id() const override { return "wordpiece-v1"; }

  std::vector<std::string> sorted_vocab() const;

 private:
  std::unordered_set<std::string> vocab_;
};

/// The token -> word map of the encoder view of a WordSequence.
class TokenAlignment {
 public:
  TokenAlignment() = default;

  std::size_t token_count() const { return tokens_.size(); }
  std::size_t word_count() const { return first_token_.empty() ? 0 : first_token_.size() - 1; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::size_t>& word_of_token() const { return word_of_token_; }

  /// Half-open token range [first, last) covering word `w`.
  std::pair<std::size_t, std::size_t> token_span(std::size_t w) const {
    return {first_token_[w], first_token_[w + 1]};
  }

  /// Re-tokenizes only word `w` and shifts the tail of the map.
  TokenAlignment with_word_replaced(std::size_t w, std::string_view new_word,
                                    const SubwordTokenizer& tokenizer) const;

 private:
  friend TokenAlignment align_tokens(const WordSequence&, const SubwordTokenizer&);

  std::vector<std::string> tokens_;
  std::vector<std::size_t> word_of_token_;
  std::vector<std::size_t> first_token_;
};

TokenAlignment align_tokens(const WordSequence& seq, const SubwordTokenizer& tokenizer);

/// Throws std::out_of_range when `token_idx` >= token count.
std::size_t recover_word(const TokenAlignment& alignment, std::size_t token_idx);

}  // namespace seqattack
