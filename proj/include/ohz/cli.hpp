#pragma once

#include <string>
#include <vector>

namespace ohz::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCompute = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args);

int run(int argc, char** argv);

}  // namespace ohz::cli
