#pragma once

#include <stdexcept>
#include <string>

namespace relaysel {

// Base for every error the library raises. `code()` is a short stable token
// used by the CLI for machine-readable diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error("invariant", what) {}
};

class SelectionError : public Error {
 public:
  explicit SelectionError(const std::string& what) : Error("selection", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace relaysel
