#pragma once

#include <iosfwd>

namespace fkbridge::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kUsageError = 1,      // bad arguments, unreadable input, unsupported setup
    kNotConverged = 2,    // solver stopped at max_iter; outputs still written
    kValidationFailed = 3 // a diagnostic check failed
};

/// Runs the command line `argv[0] <subcommand> ...` and returns the exit code.
/// Subcommands: solve, kernel, simulate, validate, moments. Human-readable
/// progress goes to `out`, errors to `err`. The worker count is restored on
/// return.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fkbridge::cli
