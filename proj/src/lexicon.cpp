#include "seqattack/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "seqattack/errors.hpp"

namespace seqattack {

bool EmbeddingIndex::add(std::string word, std::span<const double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_) {
    throw std::invalid_argument("embedding for '" + word + "' has dimension " +
                                std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
  }
  if (index_.count(word)) {
    ++duplicates_;
    return false;
  }
  double sq = 0.0;
  for (double v : vec) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite embedding entry for '" + word + "'");
    sq += v * v;
  }
  index_.emplace(word, words_.size());
  words_.push_back(std::move(word));
  data_.insert(data_.end(), vec.begin(), vec.end());
  norms_.push_back(std::sqrt(sq));
  return true;
}

std::optional<std::size_t> EmbeddingIndex::index_of(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::span<const double>> EmbeddingIndex::lookup(std::string_view word) const {
  const auto i = index_of(word);
  if (!i) return std::nullopt;
  return vector(*i);
}

double EmbeddingIndex::cosine(std::size_t a, std::size_t b) const {
  const double denom = norms_[a] * norms_[b];
  if (denom == 0.0) return 0.0;
  const auto va = vector(a);
  const auto vb = vector(b);
  double dot = 0.0;
  for (std::size_t k = 0; k < dim_; ++k) dot += va[k] * vb[k];
  return dot / denom;
}

std::optional<double> EmbeddingIndex::cosine(std::string_view a, std::string_view b) const {
  const auto ia = index_of(a);
  const auto ib = index_of(b);
  if (!ia || !ib) return std::nullopt;
  return cosine(*ia, *ib);
}

EmbeddingIndex load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file " + path.string());
  EmbeddingIndex index;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::vector<double> vec;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::istringstream fields(line);
    std::string word;
    fields >> word;
    vec.clear();
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw FormatError(line_no, "bad embedding value '" + tok + "'");
      }
      vec.push_back(v);
    }
    if (vec.empty()) throw FormatError(line_no, "word '" + word + "' has no vector");
    if (dim == 0) dim = vec.size();
    if (vec.size() != dim) {
      throw FormatError(line_no, "expected " + std::to_string(dim) + " values, found " +
                                     std::to_string(vec.size()));
    }
    index.add(std::move(word), vec);
  }
  return index;
}

void save_embeddings(const EmbeddingIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < index.size(); ++i) {
    out << index.word(i);
    for (double v : index.vector(i)) out << ' ' << v;
    out << '\n';
  }
}

SynonymSet synonyms(const EmbeddingIndex& index, std::string_view word, std::size_t k,
                    double threshold) {
  if (k == 0) throw std::invalid_argument("synonyms: k must be >= 1");
  if (threshold < 0.0 || threshold > 1.0) throw std::invalid_argument("synonyms: threshold outside [0, 1]");

  SynonymSet out;
  out.source = std::string(word);
  const auto src = index.index_of(word);
  if (!src) {
    out.oov = true;
    return out;
  }
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (i == *src) continue;
    const double score = index.cosine(*src, i);
    if (score >= threshold) out.candidates.push_back({index.word(i), score});
  }
  auto better = [](const SynonymCandidate& a, const SynonymCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.word < b.word;
  };
  if (out.candidates.size() > k) {
    std::partial_sort(out.candidates.begin(), out.candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      out.candidates.end(), better);
    out.candidates.resize(k);
  } else {
    std::sort(out.candidates.begin(), out.candidates.end(), better);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const char* const kNltkStopwords[] = {
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't",
    "didn", "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven",
    "haven't", "isn", "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn",
    "needn't", "shan", "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't",
    "won", "won't", "wouldn", "wouldn't"};

}  // namespace

ProtectedWordPolicy::ProtectedWordPolicy() {
  for (const char* w : kNltkStopwords) stopwords_.insert(w);
}

ProtectedWordPolicy::ProtectedWordPolicy(std::unordered_set<std::string> stopwords) {
  for (const auto& w : stopwords) stopwords_.insert(to_lower(w));
}

ProtectedWordPolicy ProtectedWordPolicy::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stop-word list " + path.string());
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    words.insert(line.substr(b, e - b + 1));
  }
  return ProtectedWordPolicy(std::move(words));
}

bool ProtectedWordPolicy::is_stopword(std::string_view word) const {
  return stopwords_.count(to_lower(word)) > 0;
}

bool is_protected(const ProtectedWordPolicy& policy, std::string_view word) {
  return is_punctuation(word) || policy.is_stopword(word);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::pair<PosTag, std::string_view> kTagNames[] = {
    {PosTag::kNoun, "NOUN"}, {PosTag::kVerb, "VERB"},   {PosTag::kAdj, "ADJ"},
    {PosTag::kAdv, "ADV"},   {PosTag::kPron, "PRON"},   {PosTag::kDet, "DET"},
    {PosTag::kAdp, "ADP"},   {PosTag::kConj, "CONJ"},   {PosTag::kNum, "NUM"},
    {PosTag::kPunct, "PUNCT"}, {PosTag::kPart, "PART"}, {PosTag::kOther, "X"}};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() + 1 && s.substr(s.size() - suffix.size()) == suffix;
}

PosTag guess_from_suffix(std::string_view w) {
  for (auto s : {"ly"}) if (ends_with(w, s)) return PosTag::kAdv;
  for (auto s : {"ing", "ed", "ize", "ise"}) if (ends_with(w, s)) return PosTag::kVerb;
  for (auto s : {"ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ish", "ent", "ant", "ary"})
    if (ends_with(w, s)) return PosTag::kAdj;
  return PosTag::kNoun;
}

bool is_number(std::string_view w) {
  bool digit = false;
  for (char c : w) {
    if (c >= '0' && c <= '9') {
      digit = true;
    } else if (c != '.' && c != ',') {
      return false;
    }
  }
  return digit;
}

bool contains(const std::vector<PosTag>& tags, PosTag t) {
  return std::find(tags.begin(), tags.end(), t) != tags.end();
}

const std::unordered_set<std::string_view> kCopulas = {
    "is", "was", "are", "were", "be", "been", "being", "am", "seems", "seemed", "seem",
    "felt", "feels", "feel", "looks", "looked", "look", "became", "becomes", "remains", "remained"};

const std::unordered_set<std::string_view> kIntensifiers = {
    "very", "so", "too", "quite", "really", "rather", "pretty", "extremely", "truly", "fairly"};

const std::unordered_set<std::string_view> kVerbTriggers = {
    "to", "will", "would", "can", "could", "should", "shall", "may", "might", "must", "did",
    "do", "does", "don't", "didn't", "doesn't"};

}  // namespace

std::string_view to_string(PosTag tag) {
  for (const auto& [t, name] : kTagNames) {
    if (t == tag) return name;
  }
  return "X";
}

std::optional<PosTag> parse_pos_tag(std::string_view name) {
  for (const auto& [t, n] : kTagNames) {
    if (n == name) return t;
  }
  return std::nullopt;
}

RuleBasedTagger::RuleBasedTagger() {
  using enum PosTag;
  for (auto w : {"i", "me", "you", "he", "him", "she", "her", "it", "we", "us", "they", "them",
                 "myself", "yourself", "himself", "herself", "itself", "ourselves", "themselves",
                 "who", "whom", "what", "which", "someone", "everyone", "nobody", "everything",
                 "something", "nothing"})
    lexicon_[w] = {kPron};
  for (auto w : {"the", "a", "an", "this", "that", "these", "those", "my", "your", "his", "its",
                 "our", "their", "some", "any", "each", "every", "no", "all", "both", "another"})
    lexicon_[w] = {kDet};
  for (auto w : {"of", "in", "on", "at", "by", "for", "with", "about", "against", "between",
                 "into", "through", "during", "before", "after", "above", "below", "from", "up",
                 "down", "out", "off", "over", "under", "near", "without", "within", "like"})
    lexicon_[w] = {kAdp};
  for (auto w : {"and", "but", "or", "nor", "yet", "because", "although", "though", "while",
                 "if", "unless", "than", "whereas"})
    lexicon_[w] = {kConj};
  for (auto w : {"to", "not", "n't"}) lexicon_[w] = {kPart};
  for (auto w : {"is", "was", "are", "were", "be", "been", "being", "am", "have", "has", "had",
                 "do", "does", "did", "will", "would", "can", "could", "should", "shall", "may",
                 "might", "must"})
    lexicon_[w] = {kVerb};
  for (auto w : {"very", "so", "too", "quite", "really", "rather", "just", "also", "never",
                 "always", "often", "here", "there", "now", "then", "again", "once", "still",
                 "even", "almost", "well"})
    lexicon_[w] = {kAdv};

  // A small open-class core; larger vocabularies come from load_lexicon().
  lexicon_["run"] = {kVerb, kNoun};
  lexicon_["runs"] = {kVerb, kNoun};
  lexicon_["walk"] = {kVerb, kNoun};
  lexicon_["jog"] = {kVerb, kNoun};
  lexicon_["sprint"] = {kVerb, kNoun};
  lexicon_["race"] = {kNoun, kVerb};
  lexicon_["marathon"] = {kNoun};
  lexicon_["fast"] = {kAdv, kAdj};
  lexicon_["quickly"] = {kAdv};
  lexicon_["great"] = {kAdj};
  lexicon_["fine"] = {kAdj, kNoun, kAdv};
  lexicon_["good"] = {kAdj, kNoun};
  lexicon_["nice"] = {kAdj};
  lexicon_["bad"] = {kAdj};
  lexicon_["movie"] = {kNoun};
  lexicon_["film"] = {kNoun, kVerb};
  lexicon_["character"] = {kNoun};
  lexicon_["creation"] = {kNoun};
  lexicon_["see"] = {kVerb};
}

void RuleBasedTagger::add_entry(const std::string& word, std::vector<PosTag> tags) {
  if (tags.empty()) throw std::invalid_argument("add_entry: no tags for '" + word + "'");
  lexicon_[to_lower(word)] = std::move(tags);
}

void RuleBasedTagger::load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open POS lexicon " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(line_no, "expected word<TAB>tags");
    std::vector<PosTag> tags;
    std::string_view rest = std::string_view(line).substr(tab + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto name = rest.substr(0, comma);
      const auto tag = parse_pos_tag(name);
      if (!tag) throw FormatError(line_no, "unknown POS tag '" + std::string(name) + "'");
      tags.push_back(*tag);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    add_entry(line.substr(0, tab), std::move(tags));
  }
}

std::vector<PosTag> RuleBasedTagger::tag(const std::vector<std::string>& words) const {
  using enum PosTag;
  std::vector<PosTag> out;
  out.reserve(words.size());
  std::string prev;
  for (const auto& raw : words) {
    const std::string w = to_lower(raw);
    PosTag tag = kOther;
    if (is_punctuation(w)) {
      tag = kPunct;
    } else if (is_number(w)) {
      tag = kNum;
    } else if (const auto it = lexicon_.find(w); it != lexicon_.end()) {
      const auto& tags = it->second;
      tag = tags.front();
      if (tags.size() > 1 && !out.empty()) {
        const PosTag before = out.back();
        if ((before == kPron || kVerbTriggers.count(prev)) && contains(tags, kVerb)) {
          tag = kVerb;
        } else if ((kCopulas.count(prev) || kIntensifiers.count(prev)) && contains(tags, kAdj)) {
          tag = kAdj;
        } else if ((before == kDet || before == kAdj) && contains(tags, kNoun)) {
          tag = kNoun;
        }
      }
    } else {
      tag = guess_from_suffix(w);
    }
    out.push_back(tag);
    prev = w;
  }
  return out;
}

bool pos_compatible(const PosTagger& tagger, std::string_view original, std::string_view candidate,
                    const WordSequence& sentence, std::size_t position, Diagnostics* diagnostics) {
  if (position >= sentence.size()) throw std::out_of_range("pos_compatible: bad position");
  if (to_lower(original) == to_lower(candidate)) return true;
  try {
    const auto before = tagger.tag(sentence.with_word(position, std::string(original)).words());
    const auto after = tagger.tag(sentence.with_word(position, std::string(candidate)).words());
    if (before.size() != sentence.size() || after.size() != sentence.size()) {
      throw ScorerError("tagger returned a tag sequence of the wrong length");
    }
    return before[position] == after[position];
  } catch (const std::exception&) {
    if (diagnostics) ++diagnostics->tagger_failures;
    return false;
  }
}

}  // namespace seqattack
