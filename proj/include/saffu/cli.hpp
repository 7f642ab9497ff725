#pragma once

#include <string>
#include <vector>

namespace saffu::cli {

// Executes one CLI invocation (args exclude the program name). Returns 0 on
// success, 1 with a one-line diagnostic on failure, 2 on usage errors.
int run(const std::vector<std::string>& args);

}  // namespace saffu::cli
