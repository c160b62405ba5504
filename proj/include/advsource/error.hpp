#pragma once

#include <stdexcept>
#include <string>

namespace advsource {

// Invalid argument values (out-of-range targets, malformed configs).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Tensor/model shape disagreements.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition (e.g. attacking an image that
// is not correctly classified by every ensemble member).
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite math was required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent or corrupt data: duplicate record keys, schema violations,
// coverage gaps.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace advsource
