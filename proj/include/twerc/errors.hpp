#pragma once

#include <stdexcept>
#include <string>

namespace twerc {

// Invalid configuration value; `field` names the offending field.
class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error("config field '" + field + "': " + what),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

// Unknown entity / relation id.
class LookupError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad argument to an operation (dim mismatch, inverted window, ...).
class ArgumentError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent inputs that violate a cross-structure contract.
class DataIntegrityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training could not proceed (empty graph, NaN loss, single-class log).
class TrainingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required input file is missing or unreadable; `path` is the file.
class MissingInputError : public std::runtime_error {
public:
  explicit MissingInputError(std::string path)
      : std::runtime_error("missing input file: " + path),
        path_(std::move(path)) {}
  const std::string& path() const { return path_; }

private:
  std::string path_;
};

// Persisted file has a bad magic / version / layout.
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace twerc
