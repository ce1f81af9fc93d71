#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace timet::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs the command line `args` (args[0] is the program name). Results go to
// `out`; failures produce exactly one "timet: error: ..." line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace timet::cli
