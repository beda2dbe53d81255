#pragma once

#include <string>
#include <vector>

namespace hdae::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Parses and executes one command. Never throws; returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

} // namespace hdae::cli
