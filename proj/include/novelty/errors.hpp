#pragma once

#include <stdexcept>
#include <string>

namespace novelty {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Matrix/tensor dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value is violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Non-finite input where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API called in the wrong order or with mismatched state (e.g. stale cache).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Inputs disagree with each other (e.g. distance table does not cover a batch).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  explicit FormatError(const std::string& what) : Error(what) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_ = 0;
};

// Invalid experiment configuration. `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace novelty
