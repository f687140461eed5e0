#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stereo::cli {

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kUsage = 2,
    kIo = 3,
};

// Runs one command line (args[0] is the program name). Normal output goes to
// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace stereo::cli
