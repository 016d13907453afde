#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hbt {

inline constexpr const char* kToolVersion = "1.0.0";

/// Runs the command line tool. `args` excludes the program name.
/// Exit codes: 0 success, 1 stage error, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace hbt
