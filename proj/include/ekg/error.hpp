#pragma once

#include <stdexcept>
#include <string>

namespace ekg {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents or layout inconsistent with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument outside its valid domain (tau <= 0, factor < 1, ...).
class ParamError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where only finite values are legal.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object whose state does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

// Bad configuration file, unknown key, inconsistent run settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file, magic mismatch, geometry mismatch on load.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Class index or element index outside its range.
class IndexError : public Error {
 public:
  using Error::Error;
};

}  // namespace ekg
