#pragma once

#include <stdexcept>
#include <string>

namespace rlpm {

/// Root of every error raised by the engine. Each failure mode has its own
/// subclass so callers (and the CLI exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericsError : public Error {
 public:
  using Error::Error;
};

class ArityError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Manifest is syntactically or structurally invalid.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Blob content does not match the manifest checksum.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Layer wiring violates DAG rules (cycles, dangling ids, multiple outputs).
class GraphError : public Error {
 public:
  using Error::Error;
};

class UnsupportedRuleError : public Error {
 public:
  using Error::Error;
};

class ConversionError : public Error {
 public:
  using Error::Error;
};

}  // namespace rlpm
