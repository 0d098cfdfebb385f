#pragma once

#include <stdexcept>
#include <string>

namespace lgr {

// Shapes of operands do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument (axis, level index, eps, ...) is out of range.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Structured input (hierarchy, annotation, config) violates its invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An API was used out of order (second backward, missing cache, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lgr
