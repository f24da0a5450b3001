#pragma once

#include <stdexcept>
#include <string>

namespace deskqa {

enum class ErrorCode {
  InvalidArgument,
  NotFound,
  Conflict,
  FailedPrecondition,
  ParseError,
  Io,
  Unavailable,
};

const char* to_string(ErrorCode code);

/// Exception type used across the library. `code` is machine readable and
/// maps onto the gateway's ApiError; `details` carries structured context
/// such as a conflicting id or a byte offset.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string details = {})
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::string details_;
};

}  // namespace deskqa
