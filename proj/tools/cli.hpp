#pragma once

#include <string>
#include <vector>

namespace d3ood::cli {

/// Runs one command line. Returns the process exit code: 0 success,
/// 1 usage error, 2 data error, 3 numerical-guard failure.
int run(int argc, const char* const* argv);

/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args);

}  // namespace d3ood::cli
