#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace metaprune::cli {

enum ExitCode : int {
    kOk = 0,
    kRuntimeError = 1,
    kUsageError = 2,
    kInterrupted = 130,
};

/// Full command line including the program name. Output goes to `out`,
/// diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Makes SIGINT/SIGTERM request a clean stop at the next epoch boundary.
void install_signal_handlers();

}  // namespace metaprune::cli
