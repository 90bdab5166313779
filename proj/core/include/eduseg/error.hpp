#pragma once

#include <stdexcept>
#include <string>

namespace eduseg {

// Base of every error raised by the library. Each subclass marks one failure
// family so callers (and the CLI's exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition (non-scalar loss, bad label...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class UnknownTensorError : public Error {
 public:
  using Error::Error;
};

// Training diverged (NaN/inf loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace eduseg
