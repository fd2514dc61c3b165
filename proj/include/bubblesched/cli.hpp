#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bubblesched {

enum ExitStatus : int {
    exit_ok = 0,
    exit_usage = 1,
    exit_config = 2,
    exit_failure = 3,
};

/// Runs one command line (without the program name). Returns the exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bubblesched
