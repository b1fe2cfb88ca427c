#pragma once

#include <stdexcept>
#include <string>

namespace martvae {

/// Invalid configuration values (dataset, model, or training settings).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. The message names the offending field.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed but unusable input (shape mismatch, unknown label, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ProjectionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when the optimizer encounters a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace martvae
