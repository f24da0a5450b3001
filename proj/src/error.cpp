#include "deskqa/error.hpp"

namespace deskqa {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::FailedPrecondition: return "failed_precondition";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Unavailable: return "unavailable";
  }
  return "unknown";
}

}  // namespace deskqa
