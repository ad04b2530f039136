#include "seqattack/scorers.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "seqattack/errors.hpp"

namespace seqattack {

double mean_token_loss(const FluencyScorer& scorer, const WordSequence& sentence) {
  std::vector<double> losses;
  try {
    losses = scorer.token_losses(sentence.words());
  } catch (const ScorerError&) {
    throw;
  } catch (const std::exception& e) {
    throw ScorerError(std::string("fluency scorer failed: ") + e.what());
  }
  if (losses.size() != sentence.size() || losses.empty()) {
    throw ScorerError("fluency scorer returned " + std::to_string(losses.size()) + " losses for " +
                      std::to_string(sentence.size()) + " words");
  }
  double sum = 0.0;
  for (double l : losses) {
    if (!std::isfinite(l) || l < 0.0) throw ScorerError("fluency scorer returned an invalid loss");
    sum += l;
  }
  return sum / static_cast<double>(losses.size());
}

double fluency_reward(const FluencyScorer& scorer, const WordSequence& prev, const WordSequence& curr) {
  return mean_token_loss(scorer, curr) - mean_token_loss(scorer, prev);
}

// ---------------------------------------------------------------------------

std::uint32_t TrigramLm::intern(const std::string& w) {
  auto [it, inserted] = ids_.emplace(w, static_cast<std::uint32_t>(vocab_.size()));
  if (inserted) vocab_.push_back(w);
  return it->second;
}

std::uint32_t TrigramLm::id_of(std::string_view w) const {
  if (w == kBos) return bos_;
  const auto it = ids_.find(to_lower(w));
  return it == ids_.end() ? unk_ : it->second;
}

void TrigramLm::finalize() {
  // <s> is context-only: it gets an id outside the predictable vocabulary.
  bos_ = static_cast<std::uint32_t>(vocab_.size());
  uni_.resize(vocab_.size(), 0.0);
  uni_total_ = 0.0;
  uni_types_ = 0.0;
  for (double c : uni_) {
    uni_total_ += c;
    if (c > 0) uni_types_ += 1.0;
  }
  bi_ctx_.clear();
  tri_ctx_.clear();
  for (const auto& [k, c] : bi_) {
    auto& ctx = bi_ctx_[k >> 21];
    ctx.first += c;
    ctx.second += 1.0;
  }
  for (const auto& [k, c] : tri_) {
    auto& ctx = tri_ctx_[k >> 21];
    ctx.first += c;
    ctx.second += 1.0;
  }
}

TrigramLm TrigramLm::fit(const std::vector<std::vector<std::string>>& sentences, double discount) {
  if (!(discount > 0.0 && discount < 1.0)) throw ScorerError("trigram discount must lie in (0, 1)");
  TrigramLm lm;
  lm.discount_ = discount;
  for (const auto& s : sentences) {
    for (const auto& w : s) lm.intern(to_lower(w));
  }
  lm.eos_ = lm.intern(std::string(kEos));
  lm.unk_ = lm.intern(std::string(kUnk));
  const auto bos = static_cast<std::uint32_t>(lm.vocab_.size());
  lm.uni_.assign(lm.vocab_.size(), 0.0);
  for (const auto& s : sentences) {
    std::uint32_t u = bos, v = bos;
    auto count = [&](std::uint32_t w) {
      lm.uni_[w] += 1.0;
      lm.bi_[key(v, w)] += 1.0;
      lm.tri_[key(u, v, w)] += 1.0;
      u = v;
      v = w;
    };
    for (const auto& w : s) count(lm.ids_.at(to_lower(w)));
    count(lm.eos_);
  }
  lm.finalize();
  return lm;
}

double TrigramLm::p1(std::uint32_t w) const {
  const double V = static_cast<double>(vocab_.size());
  if (uni_total_ == 0.0) return 1.0 / V;
  const double c = w < uni_.size() ? uni_[w] : 0.0;
  return std::max(c - discount_, 0.0) / uni_total_ + discount_ * uni_types_ / uni_total_ / V;
}

double TrigramLm::p2(std::uint32_t w, std::uint32_t v) const {
  const auto ctx = bi_ctx_.find(v);
  if (ctx == bi_ctx_.end()) return p1(w);
  const auto [total, types] = ctx->second;
  const auto it = bi_.find(key(v, w));
  const double c = it == bi_.end() ? 0.0 : it->second;
  return std::max(c - discount_, 0.0) / total + discount_ * types / total * p1(w);
}

double TrigramLm::p3(std::uint32_t w, std::uint32_t u, std::uint32_t v) const {
  const auto ctx = tri_ctx_.find(key(u, v));
  if (ctx == tri_ctx_.end()) return p2(w, v);
  const auto [total, types] = ctx->second;
  const auto it = tri_.find(key(u, v, w));
  const double c = it == tri_.end() ? 0.0 : it->second;
  return std::max(c - discount_, 0.0) / total + discount_ * types / total * p2(w, v);
}

double TrigramLm::prob(std::string_view w, std::string_view u, std::string_view v) const {
  const std::uint32_t wid = (w == kEos) ? eos_ : id_of(w);
  if (wid == bos_) throw ScorerError("<s> is not a predictable token");
  return p3(wid, id_of(u), id_of(v));
}

std::vector<double> TrigramLm::token_losses(const std::vector<std::string>& words) const {
  std::vector<double> out;
  out.reserve(words.size());
  std::uint32_t u = bos_, v = bos_;
  for (const auto& w : words) {
    const std::uint32_t id = id_of(w);
    out.push_back(-std::log(p3(id == bos_ ? unk_ : id, u, v)));
    u = v;
    v = id;
  }
  return out;
}

void TrigramLm::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "seqattack-trigram v1\n";
  out << "vocab_size " << vocab_.size() << '\n';
  out << "discount " << discount_ << '\n';
  auto name = [&](std::uint64_t id) -> std::string_view {
    return id == bos_ ? kBos : std::string_view(vocab_[id]);
  };
  constexpr std::uint64_t mask = (1ull << 21) - 1;
  // Sorted so the file is byte-stable across runs.
  std::map<std::string, double> uni;
  for (std::uint32_t i = 0; i < uni_.size(); ++i) {
    if (uni_[i] > 0) uni.emplace(vocab_[i], uni_[i]);
  }
  std::map<std::string, double> bi, tri;
  for (const auto& [k, c] : bi_) bi.emplace(std::string(name(k >> 21)) + ' ' + std::string(name(k & mask)), c);
  for (const auto& [k, c] : tri_) {
    tri.emplace(std::string(name(k >> 42)) + ' ' + std::string(name((k >> 21) & mask)) + ' ' +
                    std::string(name(k & mask)),
                c);
  }
  out << "unigrams " << uni.size() << '\n';
  for (const auto& [k, c] : uni) out << k << '\t' << c << '\n';
  out << "bigrams " << bi.size() << '\n';
  for (const auto& [k, c] : bi) out << k << '\t' << c << '\n';
  out << "trigrams " << tri.size() << '\n';
  for (const auto& [k, c] : tri) out << k << '\t' << c << '\n';
}

TrigramLm TrigramLm::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScorerError("cannot open trigram model " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) throw FormatError(line_no + 1, "unexpected end of trigram model");
    ++line_no;
    return line;
  };
  if (next() != "seqattack-trigram v1") throw FormatError(line_no, "not a seqattack-trigram v1 file");

  auto header = [&](const std::string& expect) {
    std::istringstream s(next());
    std::string tag;
    double value = 0;
    if (!(s >> tag >> value) || tag != expect) throw FormatError(line_no, "expected '" + expect + "'");
    return value;
  };
  const auto vocab_size = static_cast<std::size_t>(header("vocab_size"));
  TrigramLm lm;
  lm.discount_ = header("discount");

  auto read_table = [&](const std::string& tag, std::size_t order, auto&& sink) {
    const auto n = static_cast<std::size_t>(header(tag));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& l = next();
      const auto tab = l.find('\t');
      if (tab == std::string::npos) throw FormatError(line_no, "missing count");
      std::istringstream words(l.substr(0, tab));
      std::vector<std::string> ws;
      for (std::string w; words >> w;) ws.push_back(w);
      if (ws.size() != order) throw FormatError(line_no, "wrong n-gram order");
      sink(ws, std::stod(l.substr(tab + 1)));
    }
  };

  std::vector<std::pair<std::string, double>> unigrams;
  read_table("unigrams", 1, [&](const auto& ws, double c) { unigrams.emplace_back(ws[0], c); });
  for (const auto& [w, c] : unigrams) lm.intern(w);
  lm.eos_ = lm.intern(std::string(kEos));
  lm.unk_ = lm.intern(std::string(kUnk));
  if (lm.vocab_.size() != vocab_size) throw FormatError(line_no, "vocab_size does not match the unigram table");
  lm.bos_ = static_cast<std::uint32_t>(lm.vocab_.size());
  lm.uni_.assign(lm.vocab_.size(), 0.0);
  for (const auto& [w, c] : unigrams) lm.uni_[lm.ids_.at(w)] = c;

  auto lookup = [&](const std::string& w) -> std::uint32_t {
    if (w == kBos) return lm.bos_;
    const auto it = lm.ids_.find(w);
    if (it == lm.ids_.end()) throw FormatError(line_no, "n-gram word '" + w + "' missing from unigrams");
    return it->second;
  };
  read_table("bigrams", 2, [&](const auto& ws, double c) { lm.bi_[key(lookup(ws[0]), lookup(ws[1]))] = c; });
  read_table("trigrams", 3, [&](const auto& ws, double c) {
    lm.tri_[key(lookup(ws[0]), lookup(ws[1]), lookup(ws[2]))] = c;
  });
  lm.finalize();
  return lm;
}

// ---------------------------------------------------------------------------

std::vector<double> EmbeddingSimilarity::pooled(const WordSequence& s) const {
  std::vector<double> sum(index_.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& w : s.words()) {
    if (is_protected(policy_, w)) continue;
    const auto v = index_.lookup(to_lower(w));
    if (!v) continue;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += (*v)[k];
    ++n;
  }
  if (n > 0) {
    for (double& x : sum) x /= static_cast<double>(n);
  }
  return sum;
}

double EmbeddingSimilarity::similarity(const WordSequence& a, const WordSequence& b) const {
  const auto pa = pooled(a);
  const auto pb = pooled(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    dot += pa[k] * pb[k];
    na += pa[k] * pa[k];
    nb += pb[k] * pb[k];
  }
  if (na == 0.0 || nb == 0.0) return a.lowered() == b.lowered() ? 1.0 : 0.0;
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

double similarity_reward(const SimilarityScorer& scorer, const WordSequence& original,
                         const WordSequence& prev, const WordSequence& curr) {
  double before = 0.0, after = 0.0;
  try {
    before = scorer.similarity(original, prev);
    after = scorer.similarity(original, curr);
  } catch (const ScorerError&) {
    throw;
  } catch (const std::exception& e) {
    throw ScorerError(std::string("similarity scorer failed: ") + e.what());
  }
  if (!std::isfinite(before) || !std::isfinite(after)) throw ScorerError("similarity is not finite");
  return before - after;
}

}  // namespace seqattack
