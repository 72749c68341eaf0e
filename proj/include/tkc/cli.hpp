#pragma once

#include <string>
#include <vector>

namespace tkc {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitInput = 2,
    kExitNumerical = 3,
    kExitInvariant = 4,
};

/// Runs the tool with `args` (program name excluded). Messages go to stderr, data to files.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, char** argv);

}  // namespace tkc
