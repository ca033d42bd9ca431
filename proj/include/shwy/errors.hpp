#pragma once

#include <stdexcept>
#include <string>

namespace shwy {

// Error categories shared by the C++ core and the C API status codes.
enum class ErrorCode {
  kInvalidArgument = 1,
  kContractViolation = 2,
  kIo = 3,
  kFormat = 4,
  kTransport = 5,
  kParse = 6,
  kInternal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kInvalidArgument, what) {}
};

// A caller broke an operation's precondition (e.g. stepping a finished episode).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorCode::kContractViolation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

// Malformed persisted data (model files, reports, manifests).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCode::kFormat, what) {}
};

// HTTP failures after retries are exhausted.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorCode::kTransport, what) {}
};

// A model reply that contains no usable action or score.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorCode::kParse, what) {}
};

}  // namespace shwy
