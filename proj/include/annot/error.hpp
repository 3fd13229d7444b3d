#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace annot {

enum class ErrorCode {
  kInvalidArgument,  // malformed input, violated precondition on values
  kNotFound,         // unknown project, round, record or file
  kConflict,         // phase-order or state-machine violation
  kUnprocessable,    // semantically invalid corrections
  kConfiguration,    // missing credential, malformed script/config
  kBudgetExceeded,   // session context budget would be exceeded
  kUnavailable,      // remote backend failed after retries
  kIo,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace annot
