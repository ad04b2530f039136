#include "seqattack/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

#include "seqattack/errors.hpp"

namespace seqattack {
namespace {

struct CodePoint {
  char32_t value;
  std::size_t length;  // bytes
};

// Invalid sequences decode as single bytes so nothing is ever dropped.
CodePoint decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2), 3};
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0)
      return {static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3), 4};
  }
  return {0xFFFD, 1};
}

bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

bool is_punct_cp(char32_t c) {
  if (c < 0x80) return std::ispunct(static_cast<int>(c)) != 0;
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20);
}

bool is_digit_cp(char32_t c) { return c >= '0' && c <= '9'; }

bool is_word_cp(char32_t c) { return !is_space(c) && !is_punct_cp(c); }

bool is_joiner(char32_t c) { return c == '\'' || c == 0x2019 || c == '-'; }
bool is_number_separator(char32_t c) { return c == '.' || c == ','; }

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (static_cast<unsigned char>(ch) < 0x80) ch = static_cast<char>(std::tolower(ch));
  }
  return out;
}

bool is_punctuation(std::string_view word) {
  if (word.empty()) return false;
  for (std::size_t i = 0; i < word.size();) {
    const auto cp = decode(word, i);
    if (!is_punct_cp(cp.value)) return false;
    i += cp.length;
  }
  return true;
}

WordSequence::WordSequence(std::vector<std::string> words, std::vector<std::string> gaps)
    : words_(std::move(words)), gaps_(std::move(gaps)) {
  if (gaps_.size() != words_.size() + 1) {
    throw std::invalid_argument("WordSequence: need words.size() + 1 gaps");
  }
  compute_offsets();
}

void WordSequence::compute_offsets() {
  offsets_.resize(words_.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    pos += gaps_[i].size();
    offsets_[i] = pos;
    pos += words_[i].size();
  }
}

std::string WordSequence::text() const {
  std::string out;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    out += gaps_[i];
    out += words_[i];
  }
  if (!gaps_.empty()) out += gaps_.back();
  return out;
}

std::vector<std::string> WordSequence::lowered() const {
  std::vector<std::string> out;
  out.reserve(words_.size());
  for (const auto& w : words_) out.push_back(to_lower(w));
  return out;
}

WordSequence WordSequence::with_word(std::size_t i, std::string replacement) const {
  if (i >= words_.size()) throw std::out_of_range("WordSequence::with_word");
  WordSequence out = *this;
  out.words_[i] = std::move(replacement);
  out.compute_offsets();
  return out;
}

WordSequence WordSequence::without_word(std::size_t i) const {
  if (i >= words_.size()) throw std::out_of_range("WordSequence::without_word");
  WordSequence out = *this;
  out.words_.erase(out.words_.begin() + static_cast<std::ptrdiff_t>(i));
  // Drop the separator that hugged the deleted word so no double spaces remain.
  const std::size_t gap = (i == 0) ? 1 : i;
  out.gaps_.erase(out.gaps_.begin() + static_cast<std::ptrdiff_t>(gap));
  out.compute_offsets();
  return out;
}

WordSequence WordSequence::truncated(std::size_t max_words) const {
  if (max_words >= words_.size()) return *this;
  std::vector<std::string> words(words_.begin(), words_.begin() + static_cast<std::ptrdiff_t>(max_words));
  std::vector<std::string> gaps(gaps_.begin(), gaps_.begin() + static_cast<std::ptrdiff_t>(max_words));
  gaps.emplace_back();
  return WordSequence(std::move(words), std::move(gaps));
}

WordSequence tokenize_words(std::string_view text) {
  std::vector<CodePoint> cps;
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < text.size();) {
    const auto cp = decode(text, i);
    cps.push_back(cp);
    starts.push_back(i);
    i += cp.length;
  }

  std::vector<std::string> words;
  std::vector<std::string> gaps;
  std::string gap;
  std::string word;

  auto flush_word = [&]() {
    if (word.empty()) return;
    gaps.push_back(std::move(gap));
    gap.clear();
    words.push_back(std::move(word));
    word.clear();
  };

  for (std::size_t k = 0; k < cps.size(); ++k) {
    const char32_t c = cps[k].value;
    const std::string_view raw = text.substr(starts[k], cps[k].length);
    if (is_space(c)) {
      flush_word();
      gap += raw;
      continue;
    }
    if (is_punct_cp(c)) {
      const bool has_next = k + 1 < cps.size();
      const char32_t next = has_next ? cps[k + 1].value : 0;
      const bool joins_word = !word.empty() && is_joiner(c) && has_next && is_word_cp(next);
      const bool joins_number = !word.empty() && is_number_separator(c) && has_next &&
                                is_digit_cp(next) && is_digit_cp(cps[k - 1].value);
      if (joins_word || joins_number) {
        word += raw;
        continue;
      }
      flush_word();
      word = std::string(raw);
      flush_word();
      continue;
    }
    word += raw;
  }
  flush_word();

  if (words.empty()) throw EmptyInput();
  gaps.push_back(std::move(gap));
  return WordSequence(std::move(words), std::move(gaps));
}

// ---------------------------------------------------------------------------

WordPieceTokenizer::WordPieceTokenizer(std::unordered_set<std::string> vocab)
    : vocab_(std::move(vocab)) {}

WordPieceTokenizer WordPieceTokenizer::from_corpus(
    const std::vector<std::vector<std::string>>& sentences, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : sentences) {
    for (const auto& w : sentence) ++counts[to_lower(w)];
  }
  std::unordered_set<std::string> vocab;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) vocab.insert(w);
  }
  for (const char* suffix : {"##s", "##es", "##ed", "##ing", "##ly", "##er", "##est", "##ness",
                             "##ful", "##less", "##able", "##ous", "##ive", "##al", "##ic",
                             "##ent", "##ant", "##ion", "##y"}) {
    vocab.insert(suffix);
  }
  return WordPieceTokenizer(std::move(vocab));
}

std::vector<std::string> WordPieceTokenizer::tokenize_word(std::string_view word) const {
  const std::string lower = to_lower(word);
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < lower.size()) {
    const std::string prefix = start == 0 ? "" : "##";
    std::size_t end = lower.size();
    std::string match;
    while (end > start) {
      std::string candidate = prefix + lower.substr(start, end - start);
      if (vocab_.count(candidate)) {
        match = std::move(candidate);
        break;
      }
      // Step back one whole code point.
      do {
        --end;
      } while (end > start && (static_cast<unsigned char>(lower[end]) & 0xC0) == 0x80);
    }
    if (match.empty()) {
      const std::size_t len = decode(lower, start).length;
      match = prefix + lower.substr(start, len);
      end = start + len;
    }
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

std::vector<std::string> WordPieceTokenizer::sorted_vocab() const {
  std::vector<std::string> out(vocab_.begin(), vocab_.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> checked_pieces(std::size_t w, std::string_view word,
                                        const SubwordTokenizer& tokenizer) {
  auto pieces = tokenizer.tokenize_word(word);
  if (pieces.empty()) throw AlignmentError(w, std::string(word), "tokenizer produced no tokens");
  std::string spelled;
  for (std::size_t p = 0; p < pieces.size(); ++p) {
    std::string_view piece = pieces[p];
    if (p > 0 && piece.substr(0, 2) == "##") piece.remove_prefix(2);
    spelled += piece;
  }
  if (to_lower(spelled) != to_lower(word)) {
    throw AlignmentError(w, std::string(word), "tokens spell '" + spelled + "'");
  }
  return pieces;
}

}  // namespace

TokenAlignment align_tokens(const WordSequence& seq, const SubwordTokenizer& tokenizer) {
  TokenAlignment al;
  al.first_token_.reserve(seq.size() + 1);
  for (std::size_t w = 0; w < seq.size(); ++w) {
    al.first_token_.push_back(al.tokens_.size());
    for (auto& piece : checked_pieces(w, seq[w], tokenizer)) {
      al.tokens_.push_back(std::move(piece));
      al.word_of_token_.push_back(w);
    }
  }
  al.first_token_.push_back(al.tokens_.size());
  return al;
}

TokenAlignment TokenAlignment::with_word_replaced(std::size_t w, std::string_view new_word,
                                                  const SubwordTokenizer& tokenizer) const {
  if (w >= word_count()) throw std::out_of_range("TokenAlignment::with_word_replaced");
  auto pieces = checked_pieces(w, new_word, tokenizer);
  const auto [first, last] = token_span(w);

  TokenAlignment out;
  out.tokens_.assign(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(first));
  out.word_of_token_.assign(word_of_token_.begin(),
                            word_of_token_.begin() + static_cast<std::ptrdiff_t>(first));
  for (auto& piece : pieces) {
    out.tokens_.push_back(std::move(piece));
    out.word_of_token_.push_back(w);
  }
  out.tokens_.insert(out.tokens_.end(), tokens_.begin() + static_cast<std::ptrdiff_t>(last),
                     tokens_.end());
  out.word_of_token_.insert(out.word_of_token_.end(),
                            word_of_token_.begin() + static_cast<std::ptrdiff_t>(last),
                            word_of_token_.end());

  const std::ptrdiff_t shift =
      static_cast<std::ptrdiff_t>(pieces.size()) - static_cast<std::ptrdiff_t>(last - first);
  out.first_token_ = first_token_;
  for (std::size_t k = w + 1; k < out.first_token_.size(); ++k) {
    out.first_token_[k] = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(out.first_token_[k]) + shift);
  }
  return out;
}

std::size_t recover_word(const TokenAlignment& alignment, std::size_t token_idx) {
  if (token_idx >= alignment.token_count()) {
    throw std::out_of_range("recover_word: token " + std::to_string(token_idx) + " of " +
                            std::to_string(alignment.token_count()));
  }
  return alignment.word_of_token()[token_idx];
}

}  // namespace seqattack
