#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vlu {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration; the CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// semantics
class EmptyAnswerSet : public Error {
 public:
  EmptyAnswerSet() : Error("answer set is empty") {}
};
class OracleFailure : public Error {
 public:
  using Error::Error;
};
class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

// image perturbation
class InvalidRadius : public Error {
 public:
  using Error::Error;
};
class InvalidDegree : public Error {
 public:
  using Error::Error;
};
class InvalidSchedule : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class UnsupportedKind : public InvalidSchedule {
 public:
  using InvalidSchedule::InvalidSchedule;
};
class ImageError : public Error {
 public:
  using Error::Error;
};

// text perturbation
class TooShort : public Error {
 public:
  using Error::Error;
};

// model client
class BackendError : public Error {
 public:
  using Error::Error;
};
/// Retryable failure of a single attempt (429, 5xx, transport).
class TransientError : public BackendError {
 public:
  using BackendError::BackendError;
};
class BackendUnavailable : public BackendError {
 public:
  using BackendError::BackendError;
};
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};
class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};
class SpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// pipeline
class LengthMismatch : public Error {
 public:
  using Error::Error;
};
class UncertaintyUnavailable : public Error {
 public:
  using Error::Error;
};

// harness
class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class MissingImage : public Error {
 public:
  MissingImage(std::size_t line, const std::string& path)
      : Error("line " + std::to_string(line) + ": cannot read image " + path), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};
class EmptyResults : public Error {
 public:
  using Error::Error;
};

}  // namespace vlu
