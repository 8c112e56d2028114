#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cdn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed tensor, wrong shape, non-finite value, out-of-range argument.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Configuration that can never be valid (empty tap list, negative weight, ...).
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// A batch that cannot be domain-mixed, e.g. a single domain with alpha > 0.
class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss became NaN or infinite during training.
class TrainingDivergence : public Error {
 public:
  TrainingDivergence(std::int64_t step, const std::string& what)
      : Error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace cdn
