#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace driftlab {

/// Invalid shapes, out-of-range knobs, unknown names.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input files (IDX, task cache).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a formula.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf showed up during training or evaluation.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::ptrdiff_t layer)
      : std::runtime_error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}

  std::ptrdiff_t layer() const noexcept { return layer_; }

 private:
  std::ptrdiff_t layer_;
};

}  // namespace driftlab
