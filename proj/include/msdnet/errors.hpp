#pragma once

#include <stdexcept>
#include <string>

namespace msdnet {

// Invalid architecture, shapes, or settings detected before any numeric work.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied data: labels out of range, malformed files, wrong batch shape.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. a second backward pass over the same tape.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or Inf produced by an op, or a diverging training run.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The anytime budget does not cover even the first classifier.
class BudgetTooSmallError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msdnet
