#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cqr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input record. `line()` is 1-based; 0 when the error is not tied
/// to a line.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& message)
      : Error(source + ":" + std::to_string(line) + ": " + message),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

/// Lookup of an identifier that is not present.
class UnknownIdError : public Error {
 public:
  UnknownIdError(std::string kind, std::string id)
      : Error("unknown " + kind + " id '" + id + "'"),
        kind_(std::move(kind)),
        id_(std::move(id)) {}

  const std::string& kind() const noexcept { return kind_; }
  const std::string& id() const noexcept { return id_; }

 private:
  std::string kind_;
  std::string id_;
};

class DimensionError : public Error {
 public:
  DimensionError(std::size_t expected, std::size_t actual, const std::string& what = {})
      : Error("dimension mismatch" + (what.empty() ? std::string() : " (" + what + ")") +
              ": expected " + std::to_string(expected) + ", got " + std::to_string(actual)) {}
};

}  // namespace cqr
