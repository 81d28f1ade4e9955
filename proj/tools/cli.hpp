#pragma once

#include <iosfwd>

namespace structmap::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2 };

/// Parses argv and runs one subcommand. Failures print a single "error: ..." line to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace structmap::cli
