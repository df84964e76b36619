#pragma once

#include <string>
#include <vector>

namespace rawvsr::cli {

/// Full command-line entry point; argv[0] is the program name. Returns the
/// process exit code: 0 success, 1 runtime/io failure, 2 usage or config
/// error, 3 numeric failure.
int run(const std::vector<std::string>& argv);

}  // namespace rawvsr::cli
