#pragma once

#include <string>
#include <vector>

namespace alip::cli {

// Parses and executes one command-line invocation. `args` excludes the
// program name. Returns the process exit code: 0 on success (including
// --help), 2 on usage errors, 1 on I/O or domain failures.
int run(const std::vector<std::string>& args);

}  // namespace alip::cli
