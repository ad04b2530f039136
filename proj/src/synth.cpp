#include "seqattack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "seqattack/errors.hpp"
#include "seqattack/text.hpp"

namespace seqattack {

namespace {

using enum PosTag;

// Evaluative clusters: members 0-1 are core, member 2 drifts, the rest are
// never shown to the victim.
const std::vector<SynthCluster> kClusters = {
    {{"good", "decent", "nice", "solid", "pleasant", "fine"}, kAdj, +1},
    {{"great", "excellent", "superb", "terrific", "outstanding", "splendid"}, kAdj, +1},
    {{"beautiful", "lovely", "gorgeous", "stunning", "charming", "elegant"}, kAdj, +1},
    {{"funny", "hilarious", "amusing", "witty", "comical", "entertaining"}, kAdj, +1},
    {{"smart", "clever", "intelligent", "brilliant", "sharp", "insightful"}, kAdj, +1},
    {{"moving", "touching", "poignant", "heartfelt", "stirring", "tender"}, kAdj, +1},
    {{"bad", "poor", "lousy", "awful", "crappy", "inferior"}, kAdj, -1},
    {{"boring", "dull", "tedious", "bland", "monotonous", "tiresome"}, kAdj, -1},
    {{"stupid", "dumb", "silly", "foolish", "idiotic", "inane"}, kAdj, -1},
    {{"ugly", "hideous", "unsightly", "grotesque", "unattractive", "unpleasant"}, kAdj, -1},
    {{"terrible", "horrible", "dreadful", "atrocious", "abysmal", "appalling"}, kAdj, -1},
    {{"weak", "feeble", "flimsy", "shallow", "lame", "thin"}, kAdj, -1},
    {{"loved", "adored", "enjoyed", "cherished", "relished", "treasured"}, kVerb, +1},
    {{"hated", "despised", "loathed", "detested", "disliked", "resented"}, kVerb, -1},
    // Topical and neutral clusters; every member appears in both labels.
    {{"film", "movie", "picture", "flick"}, kNoun, 0},
    {{"plot", "storyline", "narrative"}, kNoun, 0},
    {{"story", "tale", "saga"}, kNoun, 0},
    {{"actors", "cast", "performers", "ensemble"}, kNoun, 0},
    {{"director", "filmmaker", "helmer"}, kNoun, 0},
    {{"scenes", "sequences", "segments"}, kNoun, 0},
    {{"ending", "finale", "conclusion"}, kNoun, 0},
    {{"music", "soundtrack", "score"}, kNoun, 0},
    {{"script", "screenplay", "writing"}, kNoun, 0},
    {{"performances", "portrayals", "turns"}, kNoun, 0},
    {{"effort", "care", "attention"}, kNoun, 0},
    {{"opening", "beginning", "outset"}, kNoun, 0},
    {{"theater", "cinema", "multiplex"}, kNoun, 0},
    {{"pacing", "tempo", "rhythm"}, kNoun, 0},
    {{"costumes", "outfits", "wardrobe"}, kNoun, 0},
    {{"viewing", "screening", "showing"}, kNoun, 0},
    {{"doctor", "physician", "medic"}, kNoun, 0},
    {{"town", "village", "hamlet"}, kNoun, 0},
    {{"visuals", "imagery", "graphics"}, kNoun, 0},
    {{"product", "item", "merchandise"}, kNoun, 0},
    {{"device", "gadget", "appliance", "unit"}, kNoun, 0},
    {{"quality", "craftsmanship", "workmanship"}, kNoun, 0},
    {{"price", "cost", "charge"}, kNoun, 0},
    {{"seller", "vendor", "merchant", "retailer"}, kNoun, 0},
    {{"package", "parcel", "box"}, kNoun, 0},
    {{"hand", "palm", "grip"}, kNoun, 0},
    {{"use", "usage", "operation"}, kNoun, 0},
    {{"design", "styling", "appearance"}, kNoun, 0},
    {{"screen", "display", "monitor"}, kNoun, 0},
    {{"battery", "cell", "powerpack"}, kNoun, 0},
    {{"gift", "present", "keepsake"}, kNoun, 0},
    {{"packaging", "wrapping", "casing"}, kNoun, 0},
    {{"build", "construction", "assembly"}, kNoun, 0},
    {{"controls", "buttons", "switches"}, kNoun, 0},
    {{"parts", "components", "pieces"}, kNoun, 0},
    {{"shipping", "delivery", "shipment"}, kNoun, 0},
    {{"morning", "dawn", "daybreak"}, kNoun, 0},
    {{"friends", "pals", "buddies"}, kNoun, 0},
    {{"family", "relatives", "kin"}, kNoun, 0},
    {{"wife", "spouse", "partner"}, kNoun, 0},
    {{"weekend", "holiday", "vacation"}, kNoun, 0},
    {{"day", "shift"}, kNoun, 0},
    {{"night", "evening"}, kNoun, 0},
    {{"work", "job", "office"}, kNoun, 0},
    {{"home", "house", "apartment"}, kNoun, 0},
    {{"watched", "viewed", "saw"}, kVerb, 0},
    {{"bought", "purchased", "acquired"}, kVerb, 0},
    {{"new", "recent", "latest"}, kAdj, 0},
    {{"young", "youthful", "juvenile"}, kAdj, 0},
    {{"long", "lengthy", "extended"}, kAdj, 0},
    {{"quiet", "calm", "peaceful"}, kAdj, 0},
    {{"small", "little", "tiny"}, kAdj, 0},
    {{"local", "nearby", "regional"}, kAdj, 0},
    {{"big", "large", "huge"}, kAdj, 0},
    {{"simple", "basic", "plain"}, kAdj, 0},
    {{"modern", "contemporary", "current"}, kAdj, 0},
    {{"old", "classic", "vintage"}, kAdj, 0},
    {{"fair", "reasonable", "moderate"}, kAdj, 0},
};

// {S}, {S2}: evaluative adjectives of the label's polarity; {V}: evaluative
// verb; {name}: any member of the neutral cluster headed by `name`.
const std::vector<std::string> kMovieSingle = {
    "{watched} this {new} {film} with {friends} last {weekend} : {S} {plot} , {young} {actors} , {long} {ending} .",
    "{director} {effort} shows : {S} {script} , {modern} {visuals} and {simple} {costumes} throughout the {film} .",
    "{long} {day} at {work} , then {watched} this {film} at {home} ; {V} the {story} , {music} and {opening} .",
    "{visuals} , {costumes} , {music} : all {S} on a second {viewing} of this {old} {film} at the {local} {theater} .",
    "{watched} the {film} one {night} with {family} : {actors} {S} , {ending} {long} , {music} {simple} .",
};
const std::vector<std::string> kMovieDouble = {
    "{family} {viewing} at the {local} {theater} : {S} {script} , {S2} {pacing} , {big} {screen} .",
    "{young} {doctor} in a {small} {town} ; {S} {story} , {S2} {performances} , {quiet} {ending} .",
};
const std::vector<std::string> kProductSingle = {
    "{bought} this {new} {device} for my {home} last month : {S} {quality} , {small} {package} , {fair} {price} .",
    "{seller} shipped the {package} quickly ; {device} feels {S} in the {hand} , {simple} {design} , {big} {screen} .",
    "two weeks of daily {use} at {work} : {V} this {device} , its {modern} {design} and {long} {battery} life .",
    "{big} {screen} , {long} {battery} , {modern} {design} : overall the {device} is {S} for the {price} .",
    "{friends} {bought} the same {product} from a {local} {seller} : {quality} {S} , {shipping} {long} , {price} {fair} .",
};
const std::vector<std::string> kProductDouble = {
    "{wife} {bought} this {product} as a {gift} : {S} {packaging} , {S2} {build} , {fair} {price} .",
    "we use this {small} {device} every {morning} at {home} : {S} and {S2} , with {simple} {controls} .",
};

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  const auto u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
}

bool chance(std::mt19937_64& rng, double p) { return static_cast<double>(rng() >> 11) * 0x1.0p-53 < p; }

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return d / std::sqrt(na * nb);
}

std::vector<std::string> template_words() {
  std::set<std::string> out;
  for (const auto* group : {&kMovieSingle, &kMovieDouble, &kProductSingle, &kProductDouble}) {
    for (const auto& t : *group) {
      std::istringstream s(t);
      for (std::string w; s >> w;) {
        if (w.front() != '{' && !is_punctuation(w)) out.insert(w);
      }
    }
  }
  for (const char* w : {"although", "some", "were", "i", "the"}) out.insert(w);
  return {out.begin(), out.end()};
}

const SynthCluster& neutral_cluster(const std::string& head) {
  for (const auto& c : kClusters) {
    if (c.polarity == 0 && c.words.front() == head) return c;
  }
  throw std::logic_error("unknown template slot {" + head + "}");
}

std::vector<const SynthCluster*> evaluative(PosTag pos, int polarity) {
  std::vector<const SynthCluster*> out;
  for (const auto& c : kClusters) {
    if (c.pos == pos && c.polarity == polarity) out.push_back(&c);
  }
  return out;
}

std::string fill(const std::string& tmpl, int polarity, SynthDomain domain, bool concession, std::mt19937_64& rng) {
  const auto adjs = evaluative(kAdj, polarity);
  const auto verbs = evaluative(kVerb, polarity);
  const std::size_t first = pick(rng, adjs.size());
  std::size_t second = pick(rng, adjs.size() - 1);
  if (second >= first) ++second;

  std::string t = tmpl;
  if (concession) {
    const bool verb = chance(rng, 0.25);
    const auto opposite = evaluative(verb ? kVerb : kAdj, -polarity);
    const std::string drift = opposite[pick(rng, opposite.size())]->words[2];
    const std::string clause =
        verb ? " , although i " + drift + (domain == SynthDomain::kMovies ? " the {music}" : " the {design}")
             : (domain == SynthDomain::kMovies ? " , although some {scenes} were " : " , although some {parts} were ") +
                   drift;
    t.insert(t.size() - 2, clause);
  }

  std::istringstream in(t);
  std::string out;
  for (std::string w; in >> w;) {
    std::string word = w;
    if (w == "{S}") {
      word = adjs[first]->words[pick(rng, 2)];
    } else if (w == "{S2}") {
      word = adjs[second]->words[pick(rng, 2)];
    } else if (w == "{V}") {
      word = verbs[pick(rng, verbs.size())]->words[pick(rng, 2)];
    } else if (w.front() == '{') {
      const auto& c = neutral_cluster(w.substr(1, w.size() - 2));
      word = c.words[pick(rng, c.words.size())];
    }
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

}  // namespace

std::string_view to_string(SynthDomain d) { return d == SynthDomain::kMovies ? "movies" : "products"; }

SynthDomain parse_synth_domain(std::string_view name) {
  if (name == "movies") return SynthDomain::kMovies;
  if (name == "products") return SynthDomain::kProducts;
  throw ConfigError("unknown synthetic domain '" + std::string(name) + "' (movies, products)");
}

const std::vector<SynthCluster>& synth_clusters() { return kClusters; }

SynthLexicon make_synth_lexicon(std::uint64_t seed, std::size_t dim) {
  if (dim < 16) throw ConfigError("synthetic embeddings need dim >= 16");
  std::mt19937_64 rng(seed);
  // Shared evaluative direction plus a polarity axis orthogonal to it.
  const auto sentiment = random_unit(rng, dim);
  auto polarity = random_unit(rng, dim);
  {
    double d = 0.0;
    for (std::size_t k = 0; k < dim; ++k) d += polarity[k] * sentiment[k];
    double n = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      polarity[k] -= d * sentiment[k];
      n += polarity[k] * polarity[k];
    }
    for (auto& x : polarity) x /= std::sqrt(n);
  }

  constexpr double kMaxForeignCosine = 0.4;
  std::vector<std::pair<std::string, std::vector<double>>> placed;
  auto clashes = [&](const std::vector<std::vector<double>>& vecs) {
    for (const auto& v : vecs) {
      for (const auto& [w, u] : placed) {
        if (cosine(v, u) >= kMaxForeignCosine) return true;
      }
    }
    return false;
  };

  SynthLexicon lex{EmbeddingIndex(dim), {}};
  for (const auto& c : kClusters) {
    std::vector<std::vector<double>> vecs;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::runtime_error("synthetic embedding placement did not converge");
      const auto base = random_unit(rng, dim);
      std::vector<double> centroid(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        centroid[k] = c.polarity == 0 ? base[k]
                                      : 0.8 * base[k] + 0.45 * sentiment[k] + 0.3 * c.polarity * polarity[k];
      }
      vecs.clear();
      for (std::size_t m = 0; m < c.words.size(); ++m) {
        const auto noise = random_unit(rng, dim);
        std::vector<double> v(dim);
        for (std::size_t k = 0; k < dim; ++k) v[k] = centroid[k] + 0.35 * noise[k];
        vecs.push_back(std::move(v));
      }
      if (!clashes(vecs)) break;
    }
    for (std::size_t m = 0; m < c.words.size(); ++m) {
      placed.emplace_back(c.words[m], vecs[m]);
      lex.pos.emplace_back(c.words[m], c.pos);
    }
  }
  std::set<std::string> known;
  for (const auto& [w, v] : placed) known.insert(w);
  for (const auto& w : template_words()) {
    if (known.count(w)) continue;
    std::vector<std::vector<double>> vecs;
    do {
      vecs = {random_unit(rng, dim)};
    } while (clashes(vecs));
    placed.emplace_back(w, vecs.front());
    known.insert(w);
  }
  for (const auto& [w, v] : placed) lex.embeddings.add(w, v);
  return lex;
}

SynthCorpus make_synth_corpus(SynthDomain domain, const SynthConfig& config) {
  SynthCorpus corpus;
  corpus.labels = LabelSpace({"negative", "positive"});
  std::mt19937_64 rng(config.seed ^ (domain == SynthDomain::kMovies ? 0x6d6f76ull : 0x70726full));
  const auto& single = domain == SynthDomain::kMovies ? kMovieSingle : kProductSingle;
  const auto& dbl = domain == SynthDomain::kMovies ? kMovieDouble : kProductDouble;

  auto make = [&](std::size_t n, const std::string& split) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t label = i % 2;  // balanced
      const bool two = chance(rng, config.two_slot_rate);
      const auto& pool = two ? dbl : single;
      const auto& tmpl = pool[pick(rng, pool.size())];
      const bool concession = chance(rng, config.concession_rate);
      Sample s;
      s.id = std::string(to_string(domain)) + "-" + split + ":" + std::to_string(i + 1);
      s.line = i + 1;
      s.fields = {fill(tmpl, label == 1 ? +1 : -1, domain, concession, rng)};
      s.gold = label;
      out.push_back(std::move(s));
    }
    return out;
  };
  corpus.train = make(config.train, "train");
  corpus.valid = make(config.valid, "valid");
  corpus.attack = make(config.attack, "attack");
  return corpus;
}

void save_pos_lexicon(const std::vector<std::pair<std::string, PosTag>>& entries, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [w, t] : entries) out << w << '\t' << to_string(t) << '\n';
}

void write_synth_world(const std::filesystem::path& dir, const SynthConfig& config) {
  std::filesystem::create_directories(dir);
  const auto lex = make_synth_lexicon(config.seed, config.dim);
  save_embeddings(lex.embeddings, dir / "embeddings.txt");
  save_pos_lexicon(lex.pos, dir / "pos_lexicon.tsv");
  for (auto domain : {SynthDomain::kMovies, SynthDomain::kProducts}) {
    const auto corpus = make_synth_corpus(domain, config);
    const auto sub = dir / std::string(to_string(domain));
    std::filesystem::create_directories(sub);
    save_dataset(corpus.train, corpus.labels, sub / "train.tsv");
    save_dataset(corpus.valid, corpus.labels, sub / "valid.tsv");
    save_dataset(corpus.attack, corpus.labels, sub / "attack.tsv");
  }
}

}  // namespace seqattack
