#pragma once

#include <stdexcept>
#include <string>

namespace cobra {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: schema violations, out-of-range arguments, capability mismatches.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Missing or inconsistent configuration detected before any request is issued.
class ConfigurationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Method/backend combination that cannot work (e.g. steering on a chat API).
class CapabilityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Coefficient outside the admissible domain of a control method.
class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Anything that went wrong talking to an agent. CLI exit code 2.
class BackendError : public Error {
 public:
  using Error::Error;
};

class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// A completion that contained no recognizable option label.
class ParseError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace cobra
