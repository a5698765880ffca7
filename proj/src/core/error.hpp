#pragma once

#include <stdexcept>
#include <string>

namespace sgti {

// Bad user input: config keys, graph files, missing checkpoints, CLI arguments.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible checkpoint / token cache bytes.
class FormatError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

// Operand shapes do not conform; always a programming error.
class ShapeError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace sgti
