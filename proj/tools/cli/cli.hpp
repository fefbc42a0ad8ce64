#pragma once

#include <string>
#include <vector>

namespace tdir::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command line (without the program name) and returns the exit
/// code. Never throws.
int run(const std::vector<std::string>& args);

}  // namespace tdir::cli
