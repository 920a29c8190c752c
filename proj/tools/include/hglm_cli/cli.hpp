#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hglm::cli {

enum ExitCode : int {
    kOk = 0,
    kValidation = 1,
    kInfeasible = 2,
    kIo = 3,
};

// Runs one `hglm` invocation. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hglm::cli
