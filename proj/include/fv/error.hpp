#pragma once

#include <stdexcept>
#include <string>

namespace fv {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/layer shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Bad user-supplied configuration (unknown keys, invalid ranges, ...).
struct ConfigError : Error {
  using Error::Error;
};

// A documented precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Operation requires state that has not been established yet.
struct StateError : Error {
  using Error::Error;
};

// Malformed input file; message carries the byte offset where parsing failed.
struct ParseError : Error {
  using Error::Error;
};

// File system failures: open, write, or rename.
struct IoError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Checkpoint load failures, with a machine-checkable failure kind.
struct CheckpointError : Error {
  enum class Kind {
    io,
    bad_magic,
    bad_version,
    truncated,
    tensor_count,
    tensor_name,
    config_mismatch,
  };
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

}  // namespace fv
