#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace seqattack {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInput : public Error {
 public:
  EmptyInput() : Error("empty or whitespace-only input") {}
};

class AlignmentError : public Error {
 public:
  AlignmentError(std::size_t word_index, std::string word, std::string detail)
      : Error("cannot align tokens for word " + std::to_string(word_index) + " '" + word +
              "': " + detail),
        word_index_(word_index),
        word_(std::move(word)) {}

  std::size_t word_index() const { return word_index_; }
  const std::string& word() const { return word_; }

 private:
  std::size_t word_index_;
  std::string word_;
};

/// Malformed input file. `line()` is 1-based.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VictimError : public Error {
 public:
  using Error::Error;
};

class DegenerateData : public Error {
 public:
  using Error::Error;
};

class ScorerError : public Error {
 public:
  using Error::Error;
};

class SkippedSample : public Error {
 public:
  explicit SkippedSample(std::string sample_id)
      : Error("victim already misclassifies sample " + sample_id), sample_id_(std::move(sample_id)) {}
  const std::string& sample_id() const { return sample_id_; }

 private:
  std::string sample_id_;
};

/// The agent asked for an edit the environment forbids. Always a bug upstream.
class IllegalAction : public Error {
 public:
  using Error::Error;
};

class NoLegalAction : public Error {
 public:
  NoLegalAction() : Error("every token is masked; no legal word-finder action") {}
};

class EmptyCandidates : public Error {
 public:
  explicit EmptyCandidates(std::size_t word_index)
      : Error("no admissible substitution for word " + std::to_string(word_index)),
        word_index_(word_index) {}
  std::size_t word_index() const { return word_index_; }

 private:
  std::size_t word_index_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class NothingToTrain : public TrainingError {
 public:
  NothingToTrain() : TrainingError("no eligible samples: the victim misclassifies the whole corpus") {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqattack
