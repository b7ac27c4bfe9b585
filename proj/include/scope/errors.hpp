#pragma once

#include <stdexcept>
#include <string>

namespace scope {

// Every failure raised by the library derives from Error so callers at the
// session boundary can report it uniformly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SCOPE_DEFINE_ERROR(Name)              \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

SCOPE_DEFINE_ERROR(DimensionError);
SCOPE_DEFINE_ERROR(CorruptionError);
SCOPE_DEFINE_ERROR(UndefinedMetricError);
SCOPE_DEFINE_ERROR(EmptyInputError);
SCOPE_DEFINE_ERROR(ConfigError);
SCOPE_DEFINE_ERROR(RangeError);
SCOPE_DEFINE_ERROR(DegenerateMaskError);
SCOPE_DEFINE_ERROR(NoContactError);
SCOPE_DEFINE_ERROR(TrackingLostError);
SCOPE_DEFINE_ERROR(PolicyViolationError);
SCOPE_DEFINE_ERROR(ParseError);
SCOPE_DEFINE_ERROR(OrderingError);
SCOPE_DEFINE_ERROR(ScriptError);
SCOPE_DEFINE_ERROR(EmptyQueryError);
SCOPE_DEFINE_ERROR(ProtocolError);

#undef SCOPE_DEFINE_ERROR

// Backend failures carry the wire-level error body {code, message, retryable}.
class BackendError : public Error {
 public:
  BackendError(std::string code, const std::string& message, bool retryable)
      : Error(message), code_(std::move(code)), retryable_(retryable) {}

  const std::string& code() const { return code_; }
  bool retryable() const { return retryable_; }

 private:
  std::string code_;
  bool retryable_;
};

class BackendTimeoutError : public BackendError {
 public:
  explicit BackendTimeoutError(const std::string& message)
      : BackendError("timeout", message, true) {}
};

class BackendUnavailableError : public BackendError {
 public:
  explicit BackendUnavailableError(const std::string& message)
      : BackendError("unavailable", message, true) {}
};

}  // namespace scope
