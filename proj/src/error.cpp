#include "annot/error.hpp"

namespace annot {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kUnprocessable: return "unprocessable";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kBudgetExceeded: return "budget_exceeded";
    case ErrorCode::kUnavailable: return "unavailable";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace annot
