#pragma once

#include <string>
#include <vector>

namespace cnode::cli {

// Executes one subcommand. Returns 0 on success, 1 on configuration or
// usage errors, 2 on numerical failure. `args` excludes the program name,
// so run({"solve", "--t", "1"}) is callable in-process.
int run(const std::vector<std::string>& args);

int run(int argc, const char* const* argv);

}  // namespace cnode::cli
