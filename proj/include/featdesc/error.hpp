#pragma once

#include <stdexcept>
#include <string>

namespace featdesc {

enum class ErrorCode {
  MissingTensor,
  ShapeMismatch,
  DimensionMismatch,
  IndexOutOfRange,
  TokenOutOfRange,
  SequenceTooLong,
  EmptyInput,
  LengthMismatch,
  TokenizationFailed,
  ParseError,
  Precondition,
  ConfigError,
  TransportError,
  RequestError,
  CalibrationFailed,
  DependencyMissing,
  IoError,
};

const char* error_code_name(ErrorCode code);

/// Single exception type for the library; `code()` carries the category
/// so callers and tests can match on it without string comparison.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace featdesc
