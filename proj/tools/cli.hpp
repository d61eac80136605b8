#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crfasn::cli {

enum ExitCode : int { ok = 0, usage_error = 1, failure = 2 };

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crfasn::cli
