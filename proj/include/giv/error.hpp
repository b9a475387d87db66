#pragma once

#include <stdexcept>
#include <string>

namespace giv {

// Array dimensions that do not fit an operation or a codec configuration.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated an operation's precondition (range, ordering, state).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// File system or serialization failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace giv
