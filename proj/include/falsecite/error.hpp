#pragma once

#include <stdexcept>
#include <string>

namespace falsecite {

/// Base exception for every recoverable failure raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input record; carries the 1-based line number of the record.
class RecordError : public Error {
 public:
  RecordError(std::string source, std::size_t line, const std::string& what)
      : Error(source + ": record at line " + std::to_string(line) + ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

}  // namespace falsecite
