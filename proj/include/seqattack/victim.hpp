#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace seqattack {

enum class TaskKind { kClassification, kEntailment };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// Ordered class names. At least two, all distinct.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::string& name(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::string>& names() const { return labels_; }
  std::optional<std::size_t> index_of(std::string_view name) const;

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  std::vector<std::string> labels_;
};

/// One labelled input. Classification samples carry one text field;
/// entailment samples carry (premise, hypothesis). Only `attack_field` may
/// be edited.
struct Sample {
  std::string id;
  std::size_t line = 0;
  std::vector<std::string> fields;
  std::size_t gold = 0;
  std::size_t attack_field = 0;
};

/// Reads `label<TAB>text` or `label<TAB>premise<TAB>hypothesis`. For
/// entailment rows the hypothesis is the attackable field unless
/// `attack_field` says otherwise. Raises SchemaError(line) on unknown labels
/// and wrong column counts.
std::vector<Sample> load_dataset(const std::filesystem::path& path, TaskKind kind,
                                 const LabelSpace& labels,
                                 std::optional<std::size_t> attack_field = std::nullopt);

void save_dataset(const std::vector<Sample>& samples, const LabelSpace& labels,
                  const std::filesystem::path& path);

/// The black box under attack: texts in, class probabilities out.
class VictimModel {
 public:
  virtual ~VictimModel() = default;
  virtual std::vector<double> predict(const std::vector<std::string>& fields) const = 0;
  virtual const LabelSpace& labels() const = 0;
  /// False means callers must serialize predict().
  virtual bool thread_safe() const { return true; }
  virtual std::string id() const = 0;
};

/// Calls the model and checks the result is a length-K probability vector
/// (sum within 1e-6). Any failure surfaces as VictimError.
std::vector<double> predict(const VictimModel& model, const std::vector<std::string>& fields);

std::size_t argmax(const std::vector<double>& probs);

double accuracy(const VictimModel& model, const std::vector<Sample>& samples);

struct VictimConfig {
  std::size_t dim = 16;
  std::size_t epochs = 30;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  std::uint64_t seed = 7;
};

nlohmann::json to_json(const VictimConfig& config);
VictimConfig victim_config_from_json(const nlohmann::json& j);

/// Mean of per-word embeddings (one pooled vector per field, concatenated)
/// followed by a linear softmax layer. Words outside the vocabulary pool as
/// zero vectors but still count toward the mean.
class LinearVictim final : public VictimModel {
 public:
  struct Params {
    std::vector<std::string> vocab;
    Eigen::MatrixXd embeddings;  // vocab.size() x dim
    Eigen::MatrixXd weights;     // K x (dim * fields)
    Eigen::VectorXd bias;        // K
  };

  LinearVictim(LabelSpace labels, TaskKind task, Params params, VictimConfig config = {});

  std::vector<double> predict(const std::vector<std::string>& fields) const override;
  const LabelSpace& labels() const override { return labels_; }
  std::string id() const override { return "linear-mean-embedding-v1"; }

  Eigen::VectorXd features(const std::vector<std::string>& fields) const;
  Eigen::VectorXd logits(const std::vector<std::string>& fields) const;

  /// Row of `word` in the embedding table, if known (lowercased lookup).
  std::optional<std::size_t> vocab_index(std::string_view word) const;
  /// weights[label] restricted to field `field`, dotted with the word's
  /// embedding. Zero for unknown words.
  double word_logit(std::string_view word, std::size_t label, std::size_t field = 0) const;

  TaskKind task() const { return task_; }
  std::size_t field_count() const { return task_ == TaskKind::kEntailment ? 2 : 1; }
  const Params& params() const { return params_; }
  const VictimConfig& config() const { return config_; }

  double train_accuracy = 0.0;
  std::optional<double> valid_accuracy;

  nlohmann::json to_json() const;
  static LinearVictim from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static LinearVictim load(const std::filesystem::path& path);

 private:
  LabelSpace labels_;
  TaskKind task_;
  Params params_;
  VictimConfig config_;
  std::unordered_map<std::string, std::size_t> vocab_index_;
};

/// Trains a LinearVictim with per-sample SGD. Throws DegenerateData when
/// fewer than two classes are present.
LinearVictim fit_reference_victim(const std::vector<Sample>& train, const LabelSpace& labels,
                                  TaskKind task, const VictimConfig& config,
                                  const std::vector<Sample>* valid = nullptr);

}  // namespace seqattack
