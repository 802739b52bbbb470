#pragma once

#include <stdexcept>
#include <string>

namespace lgrpo {

// Base for every error the engine raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or record; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Network-level failure talking to a remote backend. Safe to retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A remote response did not match the wire schema. Not retryable.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// The remote backend reported an error of its own.
class ServerError : public Error {
 public:
  ServerError(int status, const std::string& message)
      : Error("server error " + std::to_string(status) + ": " + message),
        status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace lgrpo
