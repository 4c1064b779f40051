#pragma once

#include <stdexcept>
#include <string>

namespace sfcap {

// Operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN/Inf appeared, or a computation that must be deterministic was not.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data or configuration (corpus lines, checkpoint headers, flags).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sfcap
