#pragma once

#include <stdexcept>
#include <string>

namespace seld {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed container or document.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Data shorter than its header promises.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Audio and annotation streams disagree on length.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  ShapeError(const std::string& what, int layer_index = -1)
      : Error(layer_index >= 0 ? "layer " + std::to_string(layer_index) + ": " + what : what),
        layer_index_(layer_index) {}
  int layer_index() const { return layer_index_; }

 private:
  int layer_index_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Artifact written by an incompatible format version or a different config.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace seld
