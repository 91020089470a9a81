#pragma once

#include <stdexcept>
#include <string>

namespace commsim {

/// Invalid numeric parameter (k out of range, p outside (0, 1], ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape the operator does not support (PermK with n not dividing d).
class UnsupportedShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Power iteration did not settle; carries the last relative gap.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_gap)
      : std::runtime_error(what), last_gap_(last_gap) {}
  double last_gap() const noexcept { return last_gap_; }

 private:
  double last_gap_;
};

/// Objective blew past the divergence guard or became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration, double value)
      : std::runtime_error(what), iteration_(iteration), value_(value) {}
  std::size_t iteration() const noexcept { return iteration_; }
  double value() const noexcept { return value_; }

 private:
  std::size_t iteration_;
  double value_;
};

/// Config schema violation. `path` is the JSON pointer of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace commsim
