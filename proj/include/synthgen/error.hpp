#pragma once

#include <stdexcept>
#include <string>

namespace synthgen {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures and integrity violations in the run store.
class StoreError : public Error {
 public:
  using Error::Error;
};

/// A backend request failed after exhausting retries. `status` is the last
/// HTTP status observed, or 0 for transport-level failures.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class TimeoutError : public BackendError {
 public:
  explicit TimeoutError(const std::string& what) : BackendError(what, 0) {}
};

}  // namespace synthgen
