#include "seqattack/victim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "seqattack/errors.hpp"
#include "seqattack/text.hpp"

namespace seqattack {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::kEntailment ? "entailment" : "classification";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification") return TaskKind::kClassification;
  if (name == "entailment") return TaskKind::kEntailment;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.size() < 2) throw ConfigError("a label space needs at least two classes");
  std::set<std::string> seen(labels_.begin(), labels_.end());
  if (seen.size() != labels_.size()) throw ConfigError("duplicate class names in label space");
}

std::optional<std::size_t> LabelSpace::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == name) return i;
  }
  return std::nullopt;
}

std::vector<Sample> load_dataset(const std::filesystem::path& path, TaskKind kind,
                                 const LabelSpace& labels, std::optional<std::size_t> attack_field) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  const std::size_t text_columns = kind == TaskKind::kEntailment ? 2 : 1;
  const std::size_t field = attack_field.value_or(text_columns - 1);
  if (field >= text_columns) throw ConfigError("attack field out of range for this task");

  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != text_columns + 1) {
      throw SchemaError(line_no, "expected " + std::to_string(text_columns + 1) + " columns, found " +
                                     std::to_string(cols.size()));
    }
    const auto gold = labels.index_of(cols[0]);
    if (!gold) throw SchemaError(line_no, "unknown label '" + cols[0] + "'");
    Sample s;
    s.id = path.filename().string() + ":" + std::to_string(line_no);
    s.line = line_no;
    s.gold = *gold;
    s.attack_field = field;
    s.fields.assign(cols.begin() + 1, cols.end());
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::vector<Sample>& samples, const LabelSpace& labels,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : samples) {
    out << labels.name(s.gold);
    for (const auto& f : s.fields) out << '\t' << f;
    out << '\n';
  }
}

std::vector<double> predict(const VictimModel& model, const std::vector<std::string>& fields) {
  for (const auto& f : fields) {
    if (f.find_first_not_of(" \t\r\n") == std::string::npos) throw VictimError("predict on empty text");
  }
  std::vector<double> p;
  try {
    p = model.predict(fields);
  } catch (const VictimError&) {
    throw;
  } catch (const std::exception& e) {
    throw VictimError(std::string("victim failed: ") + e.what());
  }
  if (p.size() != model.labels().size()) throw VictimError("victim returned the wrong number of classes");
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw VictimError("victim returned an invalid probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw VictimError("victim probabilities do not sum to 1");
  return p;
}

std::size_t argmax(const std::vector<double>& probs) {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double accuracy(const VictimModel& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) correct += argmax(predict(model, s.fields)) == s.gold;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

nlohmann::json to_json(const VictimConfig& c) {
  return {{"dim", c.dim}, {"epochs", c.epochs}, {"learning_rate", c.learning_rate},
          {"l2", c.l2}, {"seed", c.seed}};
}

VictimConfig victim_config_from_json(const nlohmann::json& j) {
  VictimConfig c;
  c.dim = j.value("dim", c.dim);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2 = j.value("l2", c.l2);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> field_words(const std::string& text) {
  try {
    return tokenize_words(text).lowered();
  } catch (const EmptyInput&) {
    return {};
  }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

}  // namespace

LinearVictim::LinearVictim(LabelSpace labels, TaskKind task, Params params, VictimConfig config)
    : labels_(std::move(labels)), task_(task), params_(std::move(params)), config_(config) {
  const auto dim = static_cast<Eigen::Index>(params_.embeddings.cols());
  if (static_cast<std::size_t>(params_.embeddings.rows()) != params_.vocab.size()) {
    throw ConfigError("victim: embedding rows do not match vocabulary");
  }
  if (params_.weights.rows() != static_cast<Eigen::Index>(labels_.size()) ||
      params_.weights.cols() != dim * static_cast<Eigen::Index>(field_count()) ||
      params_.bias.size() != static_cast<Eigen::Index>(labels_.size())) {
    throw ConfigError("victim: weight shapes do not match label space and dimension");
  }
  for (std::size_t i = 0; i < params_.vocab.size(); ++i) vocab_index_.emplace(params_.vocab[i], i);
}

std::optional<std::size_t> LinearVictim::vocab_index(std::string_view word) const {
  const auto it = vocab_index_.find(to_lower(word));
  if (it == vocab_index_.end()) return std::nullopt;
  return it->second;
}

Eigen::VectorXd LinearVictim::features(const std::vector<std::string>& fields) const {
  if (fields.size() != field_count()) throw VictimError("victim expects " + std::to_string(field_count()) + " text fields");
  const auto dim = params_.embeddings.cols();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(dim * static_cast<Eigen::Index>(fields.size()));
  for (std::size_t k = 0; k < fields.size(); ++k) {
    const auto words = field_words(fields[k]);
    if (words.empty()) continue;
    auto block = f.segment(static_cast<Eigen::Index>(k) * dim, dim);
    for (const auto& w : words) {
      const auto it = vocab_index_.find(w);
      if (it != vocab_index_.end()) block += params_.embeddings.row(static_cast<Eigen::Index>(it->second)).transpose();
    }
    block /= static_cast<double>(words.size());
  }
  return f;
}

Eigen::VectorXd LinearVictim::logits(const std::vector<std::string>& fields) const {
  return params_.weights * features(fields) + params_.bias;
}

std::vector<double> LinearVictim::predict(const std::vector<std::string>& fields) const {
  const Eigen::VectorXd p = softmax(logits(fields));
  return {p.data(), p.data() + p.size()};
}

double LinearVictim::word_logit(std::string_view word, std::size_t label, std::size_t field) const {
  const auto idx = vocab_index(word);
  if (!idx) return 0.0;
  const auto dim = params_.embeddings.cols();
  return params_.weights.row(static_cast<Eigen::Index>(label))
      .segment(static_cast<Eigen::Index>(field) * dim, dim)
      .dot(params_.embeddings.row(static_cast<Eigen::Index>(*idx)));
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError("ragged matrix in checkpoint");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json LinearVictim::to_json() const {
  nlohmann::json j;
  j["format"] = "seqattack-victim";
  j["version"] = 1;
  j["model"] = id();
  j["task"] = std::string(seqattack::to_string(task_));
  j["labels"] = labels_.names();
  j["config"] = seqattack::to_json(config_);
  j["dim"] = params_.embeddings.cols();
  j["vocab"] = params_.vocab;
  j["embeddings"] = matrix_json(params_.embeddings);
  j["weights"] = matrix_json(params_.weights);
  j["bias"] = std::vector<double>(params_.bias.data(), params_.bias.data() + params_.bias.size());
  j["metrics"]["train_accuracy"] = train_accuracy;
  if (valid_accuracy) j["metrics"]["valid_accuracy"] = *valid_accuracy;
  return j;
}

LinearVictim LinearVictim::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "seqattack-victim") throw ConfigError("not a victim checkpoint");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported victim checkpoint version");
  Params p;
  p.vocab = j.at("vocab").get<std::vector<std::string>>();
  const auto dim = j.at("dim").get<Eigen::Index>();
  p.embeddings = matrix_from_json(j.at("embeddings"), dim);
  p.weights = matrix_from_json(j.at("weights"), 0);
  const auto bias = j.at("bias").get<std::vector<double>>();
  p.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
  LinearVictim v(LabelSpace(j.at("labels").get<std::vector<std::string>>()),
                 parse_task_kind(j.at("task").get<std::string>()), std::move(p),
                 victim_config_from_json(j.at("config")));
  v.train_accuracy = j.at("metrics").value("train_accuracy", 0.0);
  if (j.at("metrics").contains("valid_accuracy")) v.valid_accuracy = j["metrics"]["valid_accuracy"].get<double>();
  return v;
}

void LinearVictim::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

LinearVictim LinearVictim::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open victim checkpoint " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad victim checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

LinearVictim fit_reference_victim(const std::vector<Sample>& train, const LabelSpace& labels,
                                  TaskKind task, const VictimConfig& config,
                                  const std::vector<Sample>* valid) {
  std::set<std::size_t> classes;
  for (const auto& s : train) classes.insert(s.gold);
  if (classes.size() < 2) throw DegenerateData("training data covers fewer than two classes");

  const std::size_t n_fields = task == TaskKind::kEntailment ? 2 : 1;
  // Tokenize once; the vocabulary is every training word.
  std::vector<std::vector<std::vector<std::size_t>>> encoded;
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& s : train) {
    if (s.fields.size() != n_fields) throw DegenerateData("sample " + s.id + " has the wrong number of fields");
    auto& enc = encoded.emplace_back();
    for (const auto& f : s.fields) {
      auto& ids = enc.emplace_back();
      for (const auto& w : field_words(f)) {
        auto [it, inserted] = index.emplace(w, vocab.size());
        if (inserted) vocab.push_back(w);
        ids.push_back(it->second);
      }
    }
  }

  const auto dim = static_cast<Eigen::Index>(config.dim);
  const auto K = static_cast<Eigen::Index>(labels.size());
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> init(0.0, 0.1);
  LinearVictim::Params p;
  p.vocab = vocab;
  p.embeddings = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(vocab.size()), dim, [&] { return init(rng); });
  p.weights = Eigen::MatrixXd::NullaryExpr(K, dim * static_cast<Eigen::Index>(n_fields), [&] { return init(rng); });
  p.bias = Eigen::VectorXd::Zero(K);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const double lr = config.learning_rate;
  const double l2 = config.l2;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (const std::size_t i : order) {
      const auto& enc = encoded[i];
      Eigen::VectorXd f = Eigen::VectorXd::Zero(dim * static_cast<Eigen::Index>(n_fields));
      for (std::size_t k = 0; k < n_fields; ++k) {
        if (enc[k].empty()) continue;
        auto block = f.segment(static_cast<Eigen::Index>(k) * dim, dim);
        for (auto id : enc[k]) block += p.embeddings.row(static_cast<Eigen::Index>(id)).transpose();
        block /= static_cast<double>(enc[k].size());
      }
      Eigen::VectorXd z = p.weights * f + p.bias;
      Eigen::VectorXd prob = softmax(z);
      Eigen::VectorXd delta = prob;
      delta(static_cast<Eigen::Index>(train[i].gold)) -= 1.0;

      const Eigen::VectorXd df = p.weights.transpose() * delta;
      p.weights -= lr * (delta * f.transpose() + l2 * p.weights);
      p.bias -= lr * delta;
      for (std::size_t k = 0; k < n_fields; ++k) {
        if (enc[k].empty()) continue;
        const Eigen::VectorXd g = df.segment(static_cast<Eigen::Index>(k) * dim, dim) /
                                  static_cast<double>(enc[k].size());
        for (auto id : enc[k]) {
          auto row = p.embeddings.row(static_cast<Eigen::Index>(id));
          row -= lr * (g.transpose() + l2 * row);
        }
      }
    }
  }

  LinearVictim victim(labels, task, std::move(p), config);
  victim.train_accuracy = accuracy(victim, train);
  if (valid && !valid->empty()) victim.valid_accuracy = accuracy(victim, *valid);
  return victim;
}

}  // namespace seqattack
