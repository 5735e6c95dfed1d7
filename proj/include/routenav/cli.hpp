#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace routenav {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;

// args excludes the program name. Errors are reported on `err` as one line:
//   error: kind=<kind> message="<text>"
int run_subcommand(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace routenav
