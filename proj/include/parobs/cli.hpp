#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace parobs {

enum ExitCode : int {
    exit_ok = 0,
    exit_check_failed = 1,
    exit_validation = 2,
    exit_convergence = 3,
    exit_io = 4,
};

/// Entry point of the `parobs` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace parobs
