#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "annot/error.hpp"

namespace annot {

/// 2 conflict, 3 not found, 4 backend unavailable, 1 anything else.
int exit_code(ErrorCode code);
inline constexpr int kUsageExit = 64;

/// Runs one subcommand. Errors print a single line "error: <code>: <message>"
/// to `err`.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace annot
