#pragma once

#include <stdexcept>
#include <string>

namespace embedlab {

// Bad shapes, out-of-range settings, malformed inputs.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Iterative method failed, or a formula hit a singular configuration.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyError : public ArgumentError {
 public:
  explicit VocabularyError(const std::string& word)
      : ArgumentError("word not in vocabulary: '" + word + "'"), word_(word) {}
  const std::string& word() const noexcept { return word_; }

 private:
  std::string word_;
};

class LengthError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, long step) : NumericError(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class OptimizationError : public NumericError {
 public:
  OptimizationError(const std::string& what, long step) : NumericError(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

// Malformed run configuration or checkpoint file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace embedlab
